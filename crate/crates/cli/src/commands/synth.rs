use anyhow::Result;
use serde_json::{json, Value};

use crate::args::{SynthArgs, SynthKind};
use crate::synth::{detector, toy, write_model, write_scenes};

pub fn cmd_synth(args: &SynthArgs) -> Result<Value> {
    match args.kind {
        SynthKind::Toy => {
            let path = write_model(&toy(args.seed), &args.out, "toy")?;
            Ok(json!({ "model": path }))
        }
        SynthKind::Detector => {
            let path = write_model(&detector(), &args.out, "detector")?;
            let scenes = write_scenes(&args.out, args.seed, args.images)?;
            Ok(json!({
                "model": path,
                "manifest": args.out.join("manifest.jsonl"),
                "images": scenes.len(),
            }))
        }
    }
}
