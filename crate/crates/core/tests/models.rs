use std::fs;

use leafbench::model_zoo::*;
use leafbench::nn::{Shape, Tensor};
use leafbench::preprocess::ImageTensor;
use leafbench::Error;

fn desk_side(arch: Architecture) -> usize {
    arch.min_input_size().max(32)
}

fn pattern(n: usize, side: usize) -> Tensor {
    Tensor::from_vec(
        Shape::new(n, 3, side, side),
        (0..n * 3 * side * side).map(|i| ((i * 37 % 101) as f32 / 101.0) - 0.5).collect(),
    )
}

#[test]
fn table_parameter_counts() {
    for spec in registry() {
        let full = ModelHandle::skeleton(&spec, BackboneScale::FULL, spec.input_size).unwrap();
        let millions = full.param_count() as f64 / 1e6;
        let tolerance = if spec.approx_params_millions.fract() == 0.0 && spec.approx_params_millions < 100.0 {
            // A whole-number entry carries only its integer digits.
            0.5
        } else {
            spec.approx_params_millions * 0.005
        };
        assert!(
            (millions - spec.approx_params_millions).abs() <= tolerance,
            "{}: {millions:.3}M vs {}M",
            spec.name,
            spec.approx_params_millions
        );

        let backbone = full.backbone_param_count();
        let adapted = adapt_head(full, 5, 0).unwrap();
        assert_eq!(adapted.backbone_param_count(), backbone, "{}", spec.name);
        assert_eq!(adapted.network().output_shape(), Shape::new(1, 5, 1, 1));
    }
}

#[test]
fn exact_full_counts() {
    let count = |arch| {
        ModelHandle::skeleton(&ArchitectureSpec::of(arch), BackboneScale::FULL, arch.input_size())
            .unwrap()
            .param_count()
    };
    assert_eq!(count(Architecture::Vgg16), 138_357_544);
    assert_eq!(count(Architecture::InceptionV3), 23_851_784);
    assert_eq!(count(Architecture::ResNet50), 25_610_152);
    assert_eq!(count(Architecture::EfficientNetB3), 12_320_528);
}

#[test]
fn desk_models_emit_distributions() {
    for arch in Architecture::ALL {
        let side = desk_side(arch);
        let m = adapt_head(
            ModelHandle::random(&ArchitectureSpec::of(arch), BackboneScale::DESK, side, 5).unwrap(),
            5,
            9,
        )
        .unwrap();
        let rows = m.predict_proba(&pattern(100, side)).unwrap();
        assert_eq!(rows.len(), 100);
        for row in rows {
            assert_eq!(row.len(), 5);
            assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6, "{arch}");
        }
    }
}

#[test]
fn seeded_head_output_is_pinned() {
    let pinned: [(Architecture, [f64; 5]); 4] = [
        (
            Architecture::EfficientNetB3,
            [0.2000001170780616, 0.2000035081549246, 0.1999927398537177, 0.20000354313156962, 0.20000009178172654],
        ),
        (
            Architecture::InceptionV3,
            [0.19851086778311244, 0.20757193489861037, 0.2040580929197721, 0.1954379758488913, 0.19442112854961363],
        ),
        (
            Architecture::ResNet50,
            [0.0026496267561273296, 0.010331390304538638, 0.9753965579888642, 0.00578342992768115, 0.00583899502278861],
        ),
        (
            Architecture::Vgg16,
            [0.20712388828893033, 0.22894671714240514, 0.2057989915661127, 0.18933244012807798, 0.16879796287447393],
        ),
    ];
    for (arch, want) in pinned {
        let side = desk_side(arch);
        let m = adapt_head(
            ModelHandle::random(&ArchitectureSpec::of(arch), BackboneScale::DESK, side, 11).unwrap(),
            5,
            23,
        )
        .unwrap();
        let got = &m.predict_proba(&pattern(1, side)).unwrap()[0];
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-6, "{arch}: {got:?}");
        }
    }
}

#[test]
fn class_prediction() {
    let spec = ArchitectureSpec::of(Architecture::ResNet50);
    let m = adapt_head(ModelHandle::random(&spec, BackboneScale::DESK, 32, 1).unwrap(), 5, 2).unwrap();
    let img = ImageTensor::new(32, 32, pattern(1, 32).data).unwrap();
    let probs = m.predict_proba(&img.to_tensor()).unwrap();
    assert_eq!(m.predict_class(&img).unwrap(), argmax(&probs[0]));
    assert!(matches!(
        m.predict_class(&ImageTensor::filled(33, 32, [0.0; 3])),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn pretrained_cache_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ArchitectureSpec::of(Architecture::Vgg16);
    let source = ModelHandle::random(&spec, BackboneScale::DESK, 32, 3).unwrap();
    let path = store_pretrained(dir.path(), &source).unwrap();

    let loaded = load_pretrained_from(dir.path(), &spec, BackboneScale::DESK, 32).unwrap();
    assert_eq!(loaded.network().output_shape(), Shape::new(1, IMAGENET_CLASSES, 1, 1));
    assert_eq!(loaded.head.out_classes, IMAGENET_CLASSES);
    let x = pattern(2, 32);
    assert_eq!(loaded.predict_proba(&x).unwrap(), source.predict_proba(&x).unwrap());

    // Inputs of another size reuse the same weights.
    assert!(load_pretrained_from(dir.path(), &spec, BackboneScale::DESK, 48).is_ok());

    let mut bytes = fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 3] ^= 0x11;
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(
        load_pretrained_from(dir.path(), &spec, BackboneScale::DESK, 32),
        Err(Error::ChecksumMismatch(_))
    ));

    let other = ArchitectureSpec::of(Architecture::ResNet50);
    assert!(matches!(
        load_pretrained_from(dir.path(), &other, BackboneScale::DESK, 32),
        Err(Error::WeightsUnavailable(_))
    ));
}

#[test]
fn environment_cache_lookup() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ArchitectureSpec::of(Architecture::EfficientNetB3);
    std::env::remove_var(WEIGHTS_DIR_ENV);
    assert!(matches!(load_pretrained(&spec), Err(Error::WeightsUnavailable(_))));
    std::env::set_var(WEIGHTS_DIR_ENV, dir.path());
    assert!(matches!(load_pretrained(&spec), Err(Error::WeightsUnavailable(_))));
    std::env::remove_var(WEIGHTS_DIR_ENV);
}

#[test]
fn head_adaptation_errors_and_freezing() {
    let spec = ArchitectureSpec::of(Architecture::EfficientNetB3);
    let base = ModelHandle::random(&spec, BackboneScale::DESK, 32, 1).unwrap();
    assert!(matches!(adapt_head(base, 1, 0), Err(Error::InvalidClassCount(1))));

    let base = ModelHandle::random(&spec, BackboneScale::DESK, 32, 1).unwrap();
    let mut m = adapt_head(base, 3, 0).unwrap();
    let all = m.network().trainable_param_count();
    m.set_backbone_frozen(true);
    let head = m.network().trainable_param_count();
    assert_eq!(head, m.head_param_count());
    assert!(head < all);
    m.set_backbone_frozen(false);
    assert_eq!(m.network().trainable_param_count(), all);
}
