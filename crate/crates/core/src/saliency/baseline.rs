use rand::Rng;

use crate::seed::rng_for;
use crate::tensor::{Scalar, Tensor};

/// Seeded uniform `[0, 1)` values, `[1, H, W]`.
pub fn random_map<T: Scalar>(image: &Tensor<T>, seed: u64) -> Tensor<T> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let mut rng = rng_for(seed, &["random-baseline"]);
    let data = (0..h * w).map(|_| T::of(rng.random::<f64>())).collect();
    Tensor::from_vec(&[1, h, w], data).expect("map shape")
}

/// Sobel gradient magnitude of the channel-mean image, replicate padding. `[1, H, W]`.
pub fn edge_map<T: Scalar>(image: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let d = image.data();
    let mean: Vec<f64> = (0..h * w).map(|p| (0..c).map(|ch| d[ch * h * w + p].f64()).sum::<f64>() / c as f64).collect();
    let at = |r: isize, col: isize| {
        let r = r.clamp(0, h as isize - 1) as usize;
        let col = col.clamp(0, w as isize - 1) as usize;
        mean[r * w + col]
    };
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h as isize {
        for col in 0..w as isize {
            let gx = (at(r - 1, col + 1) + 2.0 * at(r, col + 1) + at(r + 1, col + 1))
                - (at(r - 1, col - 1) + 2.0 * at(r, col - 1) + at(r + 1, col - 1));
            let gy = (at(r + 1, col - 1) + 2.0 * at(r + 1, col) + at(r + 1, col + 1))
                - (at(r - 1, col - 1) + 2.0 * at(r - 1, col) + at(r - 1, col + 1));
            out.push(T::of(gx.hypot(gy)));
        }
    }
    Tensor::from_vec(&[1, h, w], out).expect("map shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textbox::{render, sample_scene, BucketSpec, RenderOptions};

    #[test]
    fn edges_of_black_image_are_zero() {
        let img = Tensor::<f32>::zeros(&[3, 64, 64]);
        assert!(edge_map(&img).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn box_edges_hug_the_perimeter() {
        let bucket = BucketSpec::from_id(4).unwrap();
        for seed in 0..20 {
            let scene = sample_scene(bucket, seed, RenderOptions::default()).unwrap();
            let (r0, c0, s) = scene.bbox(crate::textbox::ObjectKind::Box1).unwrap();
            let map = edge_map(&render(&scene).pixels);
            for r in 0..64 {
                for c in 0..64 {
                    if map.data()[r * 64 + c] == 0.0 {
                        continue;
                    }
                    let near_row = r + 1 >= r0 && r <= r0 + s;
                    let near_col = c + 1 >= c0 && c <= c0 + s;
                    let inside = r > r0 && r + 2 < r0 + s && c > c0 && c + 2 < c0 + s;
                    assert!(near_row && near_col && !inside, "seed {seed} pixel ({r}, {c})");
                }
            }
        }
    }

    #[test]
    fn random_is_seeded() {
        let img = Tensor::<f32>::zeros(&[3, 8, 8]);
        assert_eq!(random_map(&img, 3), random_map(&img, 3));
        assert_ne!(random_map(&img, 3), random_map(&img, 4));
        assert!(random_map(&img, 5).data().iter().all(|v| (0.0..1.0).contains(v)));
    }
}
