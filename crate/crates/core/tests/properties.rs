use ivgan::data::{synth_clip, Batcher, Clip, SynthPreset, SynthSource, SynthSpec};
use ivgan::eval::{clip_from_bytes, clip_to_bytes, psnr, Checkpoint, ColorSpace};
use ivgan::tensor::{rng_fill, Distribution, Tensor};
use proptest::prelude::*;

fn tensor(dims: Vec<usize>, seed: u64) -> Tensor<f64> {
    rng_fill(Distribution::Normal, dims, seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matmul_is_associative(m in 1usize..6, k in 1usize..6, l in 1usize..6, n in 1usize..6, seed: u64) {
        let a = tensor(vec![m, k], seed);
        let b = tensor(vec![k, l], seed ^ 1);
        let c = tensor(vec![l, n], seed ^ 2);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right).unwrap() < 1e-10);
    }

    #[test]
    fn reshape_round_trips(dims in prop::collection::vec(1usize..5, 1..5), seed: u64) {
        let x = tensor(dims.clone(), seed);
        let flat = x.reshape([x.numel()]).unwrap();
        prop_assert_eq!(flat.reshape(dims).unwrap(), x);
    }

    #[test]
    fn permute_inverse_round_trips(seed: u64) {
        let x = tensor(vec![2, 3, 4, 5], seed);
        let y = x.permute(&[2, 0, 3, 1]).unwrap();
        prop_assert_eq!(y.dims(), &[4, 2, 5, 3]);
        prop_assert_eq!(y.permute(&[1, 3, 0, 2]).unwrap(), x);
    }

    #[test]
    fn clip_bytes_round_trip(t in 1usize..4, h in 1usize..5, w in 1usize..5, gray: bool, seed: u64) {
        let c = if gray { 1 } else { 3 };
        let clip = Clip::new(rng_fill(Distribution::Uniform(-1.0, 1.0), [t, h, w, c], seed)).unwrap();
        let bytes = clip_to_bytes(&clip);
        let back = clip_from_bytes(&bytes).unwrap();
        prop_assert_eq!(clip_to_bytes(&back), bytes);
    }

    #[test]
    fn checkpoint_bytes_round_trip(shapes in prop::collection::vec(prop::collection::vec(1usize..4, 0..4), 0..5), seed: u64) {
        let mut ck = Checkpoint::new();
        for (i, dims) in shapes.into_iter().enumerate() {
            if i % 2 == 0 {
                ck.push_f32(format!("t{i}"), rng_fill(Distribution::Normal, dims, seed ^ i as u64));
            } else {
                ck.push_f64(format!("layer.{i}.w"), rng_fill(Distribution::Normal, dims, seed ^ i as u64));
            }
        }
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back, ck);
    }

    #[test]
    fn psnr_is_symmetric(seed: u64) {
        let a: Tensor<f32> = rng_fill(Distribution::Uniform(-1.0, 1.0), [2, 3, 3, 3], seed);
        let b: Tensor<f32> = rng_fill(Distribution::Uniform(-1.0, 1.0), [2, 3, 3, 3], seed ^ 7);
        for space in [ColorSpace::Gray, ColorSpace::Rgb] {
            prop_assert_eq!(psnr(&a, &b, space).unwrap(), psnr(&b, &a, space).unwrap());
        }
    }

    #[test]
    fn synthesized_values_in_range(index in 0u64..1000, panning: bool, seed: u64) {
        let preset = if panning { SynthPreset::MovingSquaresPanningBg } else { SynthPreset::MovingSquaresStaticBg };
        let clip = synth_clip(&SynthSpec::desk(preset, seed), index).unwrap();
        prop_assert!(clip.tensor().data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn batcher_covers_each_epoch_exactly_once() {
    use ivgan::data::BatchStream;
    let spec = SynthSpec::desk(SynthPreset::MovingSquaresStaticBg, 2);
    let mut b = Batcher::new(SynthSource { spec, count: 12 }, 4, 5).unwrap();
    for _ in 0..2 {
        let mut seen: Vec<usize> = (0..3).flat_map(|_| b.next_indices()).collect();
        seen.sort();
        assert_eq!(seen, (0..12).collect::<Vec<_>>());
    }
    assert_eq!(b.next_batch().unwrap().dims(), &[4, 8, 16, 16, 3]);
}
