//! Regenerates the bundled ground motion for the six-story fixture.

use std::path::Path;

use embo::fixture::{synthetic_ground_motion, GroundMotionSpec, SIX_STORY_GROUND_FILE};

fn main() -> Result<(), embo::RunError> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(SIX_STORY_GROUND_FILE);
    embo::io::write_record(&path, &synthetic_ground_motion(&GroundMotionSpec::six_story()))?;
    println!("wrote {}", path.display());
    Ok(())
}
