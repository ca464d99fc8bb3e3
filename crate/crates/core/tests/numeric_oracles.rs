mod common;

use common::oracles::{dense_poisson, dense_solve, naive_resample, relative_residual, Filter};
use portrait_forge_core::composite::{poisson_blend, Mask, PoissonOptions};
use portrait_forge_core::imgcore::{resample, ResampleKernel};
use portrait_forge_core::ImageBuffer;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> ImageBuffer {
    ImageBuffer::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap()
}

fn check_against_dense(src: &ImageBuffer, dst: &ImageBuffer, mask: &Mask, offset: (i64, i64), mixed: bool) {
    let opts = PoissonOptions {
        mixed_gradients: mixed,
        ..Default::default()
    };
    let got = poisson_blend(src, dst, mask, offset, &opts).unwrap();
    for ch in 0..3 {
        let sys = dense_poisson(src, dst, mask, offset, ch);
        if mixed {
            // the dense oracle has no mixed gradients; only residual is checked
            continue;
        }
        let want = dense_solve(sys.a.clone(), sys.b.clone());
        let x: Vec<f64> = sys
            .cells
            .iter()
            .map(|&(px, py)| got.planes[ch][py * dst.width() as usize + px])
            .collect();
        let diff = x.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-4, "channel {ch}: max diff {diff}");
        assert!(relative_residual(&sys.a, &x, &sys.b) < 1e-6);
        // pixels outside the region are untouched
        for y in 0..dst.height() {
            for x in 0..dst.width() {
                if !sys.cells.contains(&(x as usize, y as usize)) {
                    assert_eq!(got.image.pixel(x, y)[ch], dst.pixel(x, y)[ch]);
                }
            }
        }
    }
}

#[test]
fn poisson_matches_dense_solve_on_irregular_regions() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..12 {
        let (w, h) = (rng.random_range(6..14u32), rng.random_range(6..14u32));
        let src = random_image(&mut rng, w, h);
        let dst = random_image(&mut rng, w, h);
        let mut mask = Mask::from_fn(w, h, |x, y| {
            let inner = x > 0 && y > 0 && x + 1 < w && y + 1 < h;
            if inner && rng.random_bool(0.6) {
                255
            } else {
                0
            }
        })
        .unwrap();
        if mask.data().iter().all(|&m| m == 0) {
            mask = Mask::from_fn(w, h, |x, y| if (x, y) == (2, 2) { 255 } else { 0 }).unwrap();
        }
        check_against_dense(&src, &dst, &mask, (0, 0), false);
        let _ = case;
    }
}

#[test]
fn poisson_with_offset_into_larger_destination() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let src = random_image(&mut rng, 6, 5);
    let dst = random_image(&mut rng, 15, 12);
    let mask = Mask::filled(6, 5, 255).unwrap();
    check_against_dense(&src, &dst, &mask, (4, 3), false);
}

#[test]
fn mixed_gradients_converge() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let src = random_image(&mut rng, 10, 10);
    let dst = random_image(&mut rng, 10, 10);
    let mask = Mask::from_fn(10, 10, |x, y| if (2..8).contains(&x) && (2..8).contains(&y) { 255 } else { 0 }).unwrap();
    check_against_dense(&src, &dst, &mask, (0, 0), true);
}

#[test]
fn constant_source_reproduces_destination_boundary_harmonics() {
    // zero source gradient over a flat destination leaves the destination
    let src = ImageBuffer::filled(9, 9, [10, 200, 30]).unwrap();
    let dst = ImageBuffer::filled(9, 9, [77, 77, 77]).unwrap();
    let mask = Mask::from_fn(9, 9, |x, y| if (1..8).contains(&x) && (1..8).contains(&y) { 255 } else { 0 }).unwrap();
    let out = poisson_blend(&src, &dst, &mask, (0, 0), &PoissonOptions::default()).unwrap();
    assert_eq!(out.image, dst);
}

const KERNELS: [(ResampleKernel, Filter); 3] = [
    (ResampleKernel::Bilinear, Filter::Triangle),
    (ResampleKernel::Bicubic, Filter::KeysCubic),
    (ResampleKernel::Lanczos3, Filter::Lanczos3),
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn resampler_matches_direct_convolution(
        seed in any::<u64>(),
        w in 1u32..20, h in 1u32..20, ow in 1u32..30, oh in 1u32..30, k in 0usize..3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = random_image(&mut rng, w, h);
        let (kernel, filter) = KERNELS[k];
        let got = resample(&img, ow, oh, kernel).unwrap();
        let want = naive_resample(&img, ow, oh, filter);
        for (a, b) in got.data().iter().zip(&want) {
            prop_assert!((*a as i32 - *b as i32).abs() <= 1, "{kernel:?} {w}x{h}->{ow}x{oh}: {a} vs {b}");
        }
    }

    #[test]
    fn resampling_a_flat_image_stays_flat(v in any::<[u8; 3]>(), ow in 1u32..40, oh in 1u32..40, k in 0usize..3) {
        let img = ImageBuffer::filled(13, 7, v).unwrap();
        let out = resample(&img, ow, oh, KERNELS[k].0).unwrap();
        for px in out.data().chunks(3) {
            prop_assert_eq!(px, &v[..]);
        }
    }
}
