use std::path::Path;

use sapling::pipeline::PipelineConfig;
use sapling::synth::PlotSpec;

fn text_blocks(markdown: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Option<String> = None;
    for line in markdown.lines() {
        match (&mut current, line.trim()) {
            (None, "```text") => current = Some(String::new()),
            (Some(block), "```") => {
                blocks.push(std::mem::take(block));
                current = None;
            }
            (Some(block), _) => {
                block.push_str(line);
                block.push('\n');
            }
            _ => {}
        }
    }
    blocks
}

fn cli_chapter() -> Vec<String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../book/src/cli.md");
    text_blocks(&std::fs::read_to_string(path).unwrap())
}

#[test]
fn pipeline_config_example_parses() {
    let block = cli_chapter().into_iter().find(|b| b.starts_with("slam=")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for f in ["slam.tum", "gnss.csv", "manifest.csv"] {
        std::fs::write(dir.path().join(f), "").unwrap();
    }
    let cfg = PipelineConfig::parse(&block, dir.path()).unwrap();
    assert_eq!(cfg.association.first_u, Some(50));
    assert_eq!(cfg.skeleton.voxel, Some(0.005));
}

#[test]
fn plot_spec_example_parses() {
    let block = cli_chapter().into_iter().find(|b| b.starts_with("seed=")).unwrap();
    let spec = PlotSpec::from_text(&block).unwrap();
    assert_eq!(spec.saplings.len(), 5);
    assert_eq!(spec.sessions.len(), 2);
}
