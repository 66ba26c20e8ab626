use hlnet::simdata::{make_dataset, sample_path, write_dataset, Geometry, MANIFEST_NAME};

use super::create_dir;
use crate::error::{usage, CliResult};
use crate::manifest::RunManifest;
use crate::settings::{degrade_config, layered, parse, Overrides};
use crate::GenDataArgs;

const DEFAULT_SCENES: usize = 8;
const DEFAULT_SIZE: usize = 16;
const DEFAULT_CHANNELS: usize = 4;

fn parse_size(s: &str) -> CliResult<(String, String)> {
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((h.trim().to_string(), w.trim().to_string())),
        None if !s.trim().is_empty() => Ok((s.trim().to_string(), s.trim().to_string())),
        None => Err(usage("--size must be N or HxW")),
    }
}

pub fn run(a: GenDataArgs) -> CliResult<()> {
    let mut flags = Overrides::default();
    flags.set("scenes", a.scenes);
    flags.set("seed", a.seed);
    if let Some(s) = &a.size {
        let (h, w) = parse_size(s)?;
        flags.set("height", Some(h));
        flags.set("width_px", Some(w));
    }
    flags.set("channels", a.channels);
    flags.set("exposure_ratios", a.ratios.as_ref());
    flags.set("frames", a.frames);
    flags.set("blur_sigma", a.blur_sigma);
    flags.set("downscale", a.downscale);
    flags.set("saturation_level", a.saturation);
    let o = layered(a.config.as_deref(), flags)?;

    let mut cfg = degrade_config(&o)?;
    let n_ratios = cfg.exposure_ratios.len();
    if o.get("blur_frames").is_none() {
        cfg.blur_frames.retain(|f| *f < n_ratios);
    }
    if let Some(level) = a.noise {
        if !(level >= 0.0 && level.is_finite()) {
            return Err(usage(format!("--noise must be a non-negative multiplier, got {level}")));
        }
        cfg.read_noise_sigma *= level;
        cfg.shot_noise_gain *= level;
    }
    if let Some(frames) = parse::<usize>(&o, "frames")? {
        if frames != n_ratios {
            return Err(usage(format!(
                "{frames} frames requested but {n_ratios} exposure ratios given ({})",
                o.get("exposure_ratios").unwrap_or("defaults")
            )));
        }
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let scenes = parse(&o, "scenes")?.unwrap_or(DEFAULT_SCENES);
    let height = parse(&o, "height")?.unwrap_or(DEFAULT_SIZE);
    let width = parse(&o, "width_px")?.unwrap_or(height);
    let channels = parse(&o, "channels")?.unwrap_or(DEFAULT_CHANNELS);
    if scenes == 0 || channels == 0 {
        return Err(usage("--scenes and --channels must be >= 1"));
    }
    if height * cfg.downscale < 8 || width * cfg.downscale < 8 {
        return Err(usage("ground-truth scenes must be at least 8x8 (size x downscale)"));
    }
    let geometry = Geometry { channels, height, width };

    create_dir(&a.out)?;
    let pairs = make_dataset(scenes, &cfg, geometry)?;
    write_dataset(&a.out, &pairs, &cfg, geometry)?;
    let mut artifacts = vec![a.out.join(MANIFEST_NAME)];
    artifacts.extend(pairs.iter().map(|p| sample_path(&a.out, p.id())));
    let config = format!(
        "scenes={scenes}\nheight={height}\nwidth_px={width}\nchannels={channels}\n{}",
        cfg.to_kv()
    );
    RunManifest {
        command: "gen-data".into(),
        seed: cfg.seed,
        config,
        inputs: a.config.iter().cloned().collect(),
        artifacts,
    }
    .write(&a.out)?;
    println!(
        "wrote {scenes} scenes ({channels}x{height}x{width} brackets, {} frames, x{} ground truth) to {}",
        n_ratios,
        cfg.downscale,
        a.out.display()
    );
    Ok(())
}
