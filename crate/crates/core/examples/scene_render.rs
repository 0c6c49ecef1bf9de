//! Renders a two-object synthetic scene and writes it out the way
//! `mvoc gen-data` does. Pass an output directory to keep the files.

use mvoc::synthdata::{render_scene, write_scene, Background, ObjectSpec, SceneSpec, Shape, Trajectory};

fn main() -> mvoc::Result<()> {
    let spec = SceneSpec {
        height: 32,
        width: 32,
        frames: 12,
        background: Background::Texture {
            base: [0.4, 0.45, 0.5],
            amplitude: 0.1,
            period: 10.0,
            velocity: [0.0, 0.5],
        },
        objects: vec![
            ObjectSpec {
                id: 1,
                shape: Shape::Disc,
                size: 9.0,
                color: [0.9, 0.3, 0.2],
                trajectory: Trajectory::Linear { start: [16.0, 6.0], velocity: [0.0, 1.5] },
                layer: 1,
            },
            ObjectSpec {
                id: 2,
                shape: Shape::Triangle,
                size: 10.0,
                color: [0.2, 0.8, 0.4],
                trajectory: Trajectory::Sinusoidal { center: [16.0, 16.0], amplitude: [6.0, 0.0], period: 12.0, phase: 0.0 },
                layer: 2,
            },
        ],
        seed: 0,
    };
    let r = render_scene(&spec)?;
    for ((id, m), (_, v)) in r.masks.iter().zip(&r.visible) {
        println!("object {id}: {:.0} mask px, {:.0} visible px", m.sum(), v.sum());
    }
    println!("non-occluded pairs: {:.1}%", 100.0 * r.non_occluded.sum() / r.non_occluded.data().len() as f64);

    let dir = std::env::args().nth(1).map(std::path::PathBuf::from);
    let tmp;
    let dir = match dir {
        Some(d) => d,
        None => {
            tmp = tempfile::tempdir().expect("temp dir");
            tmp.path().to_path_buf()
        }
    };
    write_scene(&dir, &spec, &r)?;
    println!("wrote {}", dir.display());
    Ok(())
}
