//! Back-to-front blending of object features: each layer overwrites
//! the result under its mask, so the nearest object wins overlaps.

use mvoc::denoiser::InjectionBundle;
use mvoc::injection::{compose_layers, ObjectLayer};
use mvoc::tensor::{AffineTransform, Mask, VideoTensor};

fn features(v: f64) -> InjectionBundle {
    InjectionBundle {
        f_n: Some(VideoTensor::filled([1, 1, 4, 4], v)),
        ..Default::default()
    }
}

fn layer(id: u32, mask: Mask, v: f64) -> ObjectLayer {
    let mut l = ObjectLayer::new(id, mask, AffineTransform::identity());
    l.taps.insert(500, features(v));
    l
}

fn show(label: &str, b: &InjectionBundle) {
    println!("{label}");
    for row in b.f_n.as_ref().unwrap().data().chunks(4) {
        println!("  {row:?}");
    }
}

fn main() -> mvoc::Result<()> {
    let far = layer(1, Mask::from_fn([1, 4, 4], |_, y, x| if y < 3 && x < 3 { 1.0 } else { 0.0 }), 1.0);
    let near = layer(2, Mask::from_fn([1, 4, 4], |_, y, x| if y >= 1 && x >= 1 { 1.0 } else { 0.0 }), 2.0);
    let base = features(0.0);
    show("far then near:", &compose_layers(&base, &[&far, &near], 500)?);
    show("near then far:", &compose_layers(&base, &[&near, &far], 500)?);
    Ok(())
}
