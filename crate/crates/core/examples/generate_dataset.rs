//! Write a small synthetic dataset to disk and read one scene back.
//!
//! `cargo run --example generate_dataset -- [OUT_DIR]`

use rigidseg::io::{read_scene, scene_path, write_scene, Manifest, ManifestEntry};
use rigidseg::scene_gen::{frame_pairs, generate_scene, scene_seed, SceneGenConfig};

fn main() -> rigidseg::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("rigidseg-dataset"));
    rigidseg::io::ensure_dir(&out)?;

    let base = SceneGenConfig {
        frames: 3,
        ..SceneGenConfig::default()
    };
    let mut manifest = Manifest::new("example", base.seed, &base);
    for i in 0..4 {
        let seed = scene_seed(base.seed, i);
        let scene = generate_scene(&SceneGenConfig { seed, ..base.clone() })?;
        println!(
            "scene {i}: {} objects in a {:.2} x {:.2} room",
            scene.num_objects(),
            scene.room.0,
            scene.room.1
        );
        for pair in frame_pairs(&scene, &format!("scene{i:04}"), 0.0, seed)? {
            write_scene(&scene_path(&out, &pair.scene_id), &pair)?;
            manifest.scenes.push(ManifestEntry {
                id: pair.scene_id,
                seed: Some(seed),
            });
        }
    }
    manifest.write(&out)?;

    let back = read_scene(&scene_path(&out, "scene0000_0"))?;
    println!(
        "read back {} + {} points, mean flow {:.4}",
        back.frame_t.len(),
        back.frame_t1.len(),
        back.flow.mean_magnitude()
    );
    println!("wrote {} pairs to {}", manifest.scenes.len(), out.display());
    Ok(())
}
