use proptest::prelude::*;

use veinatn::image::{
    augment, clahe, decode_image, decode_pgm, encode_pgm, encode_png, resize_bilinear, to_network_input, ClaheParams,
    GrayImage, AUGMENT_VARIANTS, NETWORK_SIZE,
};

/// Global histogram equalization: `round(255 * cdf(v) / N)`.
fn global_he(img: &GrayImage) -> GrayImage {
    let n = img.pixels().len() as f64;
    let lut: Vec<u8> =
        (0..256).map(|v| (255.0 * img.pixels().iter().filter(|&&p| p as usize <= v).count() as f64 / n).round() as u8).collect();
    GrayImage::new(img.width(), img.height(), img.pixels().iter().map(|&p| lut[p as usize]).collect()).unwrap()
}

fn image(max_side: usize) -> impl Strategy<Value = GrayImage> {
    (1..=max_side, 1..=max_side)
        .prop_flat_map(|(w, h)| (Just(w), Just(h), prop::collection::vec(any::<u8>(), w * h)))
        .prop_map(|(w, h, px)| GrayImage::new(w, h, px).unwrap())
}

const GLOBAL: ClaheParams = ClaheParams { tiles: (1, 1), clip: f64::INFINITY };

#[test]
fn single_tile_unclipped_clahe_is_global_equalization() {
    let img = GrayImage::from_fn(53, 37, |x, y| ((x * 7 + y * y * 3) % 200 + 20) as u8).unwrap();
    assert_eq!(clahe(&img, GLOBAL).unwrap(), global_he(&img));
}

#[test]
fn two_level_image_maps_through_its_cdf() {
    let img = GrayImage::from_fn(20, 10, |x, _| if x < 10 { 50 } else { 200 }).unwrap();
    let out = clahe(&img, GLOBAL).unwrap();
    assert!(out.pixels()[..10].iter().all(|&p| p == 128));
    assert!(out.pixels()[10..20].iter().all(|&p| p == 255));
}

proptest! {
    #[test]
    fn global_equalization_oracle(img in image(24)) {
        prop_assert_eq!(clahe(&img, GLOBAL).unwrap(), global_he(&img));
    }

    #[test]
    fn constant_image_stays_constant(v in any::<u8>(), w in 8usize..40, h in 8usize..40, t in 1usize..5, clip in 0.5f64..8.0) {
        let out = clahe(&GrayImage::filled(w, h, v).unwrap(), ClaheParams { tiles: (t, t), clip }).unwrap();
        let first = out.pixels()[0];
        prop_assert!(out.pixels().iter().all(|&p| p == first));
    }

    #[test]
    fn clahe_keeps_extents_and_single_tile_order(img in image(32), clip in 0.5f64..8.0) {
        let out = clahe(&img, ClaheParams { tiles: (1, 1), clip }).unwrap();
        prop_assert_eq!((out.width(), out.height()), (img.width(), img.height()));
        let mut lut = [None; 256];
        for (&p, &q) in img.pixels().iter().zip(out.pixels()) {
            prop_assert!(*lut[p as usize].get_or_insert(q) == q);
        }
        let mapped: Vec<u8> = lut.iter().flatten().copied().collect();
        prop_assert!(mapped.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn tiled_clahe_runs_on_any_fitting_image(img in image(40), tx in 1usize..9, ty in 1usize..9, clip in 0.1f64..10.0) {
        let params = ClaheParams { tiles: (tx, ty), clip };
        match clahe(&img, params) {
            Ok(out) => prop_assert_eq!(out.pixels().len(), img.pixels().len()),
            Err(_) => prop_assert!(img.width() < tx || img.height() < ty),
        }
    }

    #[test]
    fn pgm_round_trip(img in image(30)) {
        prop_assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img.clone());
        prop_assert_eq!(decode_image(&encode_pgm(&img)).unwrap(), img);
    }

    #[test]
    fn png_round_trip(img in image(30)) {
        prop_assert_eq!(decode_image(&encode_png(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn resize_stays_within_input_range(img in image(30), ow in 1usize..50, oh in 1usize..50) {
        let out = resize_bilinear(&img, ow, oh).unwrap();
        let (lo, hi) = (*img.pixels().iter().min().unwrap(), *img.pixels().iter().max().unwrap());
        prop_assert_eq!((out.width(), out.height()), (ow, oh));
        prop_assert!(out.pixels().iter().all(|&p| lo <= p && p <= hi));
    }
}

#[test]
fn network_input_is_three_identical_unit_planes() {
    let img = GrayImage::from_fn(90, 60, |x, y| ((x + 2 * y) % 256) as u8).unwrap();
    let t = to_network_input(&img);
    assert_eq!(t.shape(), &[1, 3, NETWORK_SIZE, NETWORK_SIZE]);
    let plane = NETWORK_SIZE * NETWORK_SIZE;
    let d = t.data();
    assert_eq!(&d[..plane], &d[plane..2 * plane]);
    assert_eq!(&d[..plane], &d[2 * plane..]);
    assert!(d.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn augmentation_is_deterministic_and_keeps_extents() {
    let img = GrayImage::from_fn(64, 48, |x, y| ((x * 3 + y * 5) % 256) as u8).unwrap();
    let a = augment(&img, 9);
    assert_eq!(a.len(), AUGMENT_VARIANTS);
    assert_eq!(a, augment(&img, 9));
    assert!(a.iter().all(|v| (v.width(), v.height()) == (64, 48)));
    assert!(a.iter().all(|v| *v != img));
    assert_eq!(a[0], img.hflip());
    assert_eq!(a[1], img.vflip());
}
