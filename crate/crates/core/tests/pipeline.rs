use proptest::prelude::*;
use raht_core::codec::{decode, encode, ColorSpace, EncoderConfig};
use raht_core::{
    analyze, build_hierarchy, synthesize, voxelize, FeatureTensor, Order, PointCloud, RawCloud, ResidualMode,
    TransformConfig,
};

fn raw_cloud(n: usize) -> RawCloud {
    let positions = (0..n)
        .map(|i| {
            let t = i as f64 * 0.37;
            [t.cos() * 3.0, t.sin() * 3.0, (i % 11) as f64 * 0.2]
        })
        .collect();
    let attributes = (0..3 * n).map(|i| ((i * 53) % 256) as f64).collect();
    RawCloud { positions, attributes, channels: 3 }
}

#[test]
fn voxelize_encode_decode() {
    let cloud = voxelize(&raw_cloud(300), 5).unwrap();
    for order in [Order::P1, Order::P2] {
        let h = build_hierarchy(&cloud, order).unwrap();
        let cfg = EncoderConfig {
            transform: TransformConfig::new(order, ResidualMode::Critical).with_series_order(64),
            steps: vec![0.05; 3],
            color: ColorSpace::Raw,
        };
        let enc = encode(&cloud, &h, &cfg).unwrap();
        let dec = decode(&enc.bytes, &cloud, None).unwrap();
        assert_eq!(dec.attributes, enc.reconstruction);
        let worst = dec.attributes.data.iter().zip(&cloud.attributes).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1.0, "p={} error {worst}", order.as_u8());
    }
}

#[test]
fn stream_needs_matching_geometry() {
    let cloud = voxelize(&raw_cloud(120), 4).unwrap();
    let h = build_hierarchy(&cloud, Order::P1).unwrap();
    let cfg = EncoderConfig {
        transform: TransformConfig::new(Order::P1, ResidualMode::Overcomplete),
        steps: vec![4.0; 3],
        color: ColorSpace::Yuv709,
    };
    let enc = encode(&cloud, &h, &cfg).unwrap();
    let mut other = cloud.clone();
    other.positions[0] = [15, 15, 15];
    assert_ne!(other.positions, cloud.positions);
    assert!(decode(&enc.bytes, &other, None).is_err());
}

#[test]
fn per_level_orders_are_not_signalled() {
    let cloud = voxelize(&raw_cloud(50), 3).unwrap();
    let h = build_hierarchy(&cloud, Order::P1).unwrap();
    let mut transform = TransformConfig::new(Order::P1, ResidualMode::Overcomplete);
    transform.gram_orders = Some(vec![16; 4]);
    let cfg = EncoderConfig { transform, steps: vec![1.0; 3], color: ColorSpace::Raw };
    assert!(encode(&cloud, &h, &cfg).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn overcomplete_round_trip(pts in prop::collection::vec((0u32..8, 0u32..8, 0u32..8), 1..60), p2 in any::<bool>()) {
        let positions: Vec<[u32; 3]> = pts.iter().map(|&(x, y, z)| [x, y, z]).collect();
        let n = positions.len();
        let attrs: Vec<f64> = (0..n).map(|i| (i * 29 % 97) as f64).collect();
        let cloud = PointCloud::from_voxels(3, positions, attrs, 1).unwrap();
        let order = if p2 { Order::P2 } else { Order::P1 };
        let h = build_hierarchy(&cloud, order).unwrap();
        let cfg = TransformConfig::new(order, ResidualMode::Overcomplete).with_series_order(64);
        let y = FeatureTensor::from_vec(cloud.attributes.clone(), 1);
        let back = synthesize(&analyze(&y, &h, &cfg).unwrap(), &h, &cfg).unwrap();
        for (a, b) in back.data.iter().zip(&y.data) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }
}
