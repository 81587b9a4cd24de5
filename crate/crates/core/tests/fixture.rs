use faultrange_core::data::{generate_shapes, ShapesConfig};
use faultrange_core::fault::weight_bit_histogram;
use faultrange_core::protection::extract_bounds;
use faultrange_core::train::{evaluate_accuracy, train_fixture, TrainConfig};
use faultrange_core::{forward, predict, BitIndex, InferenceOutcome, LayerKind, Policy, ProtectionHook};

#[test]
fn trained_fixture_meets_its_contract() {
    let data = generate_shapes(&ShapesConfig::default()).unwrap();
    let (train, test) = data.parity_split();
    let (model, report) = train_fixture(&train, Some(&test), &TrainConfig::default()).unwrap();

    let losses = &report.epoch_losses;
    assert!(losses.first() > losses.last(), "{losses:?}");
    assert!(report.test_accuracy.unwrap() >= 0.95, "{report:?}");
    assert_eq!(evaluate_accuracy(&model, &test).unwrap().accuracy(), report.test_accuracy.unwrap());

    // weights stay below 2, so no exponent MSB is set
    let hist = weight_bit_histogram(&model, &[BitIndex::new(1).unwrap()]).unwrap();
    assert_eq!(hist[0].1, 0.0);

    let bounds = extract_bounds(&model, &train.images, &train.id).unwrap();
    for e in &bounds.entries {
        let after_relu = matches!(
            model.layers()[e.protection_point].kind,
            LayerKind::Relu | LayerKind::MaxPool2d { .. }
        );
        assert!(after_relu);
        assert_eq!(e.t_low, 0.0);
        assert!(e.t_up > 0.0);
    }

    let plain: Vec<_> = test
        .images
        .iter()
        .map(|x| match forward(&model, x, &mut []).unwrap() {
            InferenceOutcome::Scores(s) => s,
            other => panic!("fault-free run ended with {other:?}"),
        })
        .collect();
    for policy in Policy::ALL {
        let mut hook = ProtectionHook::new(&model, &bounds, policy).unwrap();
        for x in &train.images {
            hook.reset();
            forward(&model, x, &mut [&mut hook]).unwrap();
            assert!(!hook.any_oob(), "{policy} on the profiling set");
        }
        for (x, s) in test.images.iter().zip(&plain) {
            hook.reset();
            let out = forward(&model, x, &mut [&mut hook]).unwrap();
            let scores = out.scores().unwrap();
            assert_eq!(predict(scores).unwrap(), predict(s).unwrap());
            if !hook.any_oob() {
                assert!(scores.bit_eq(s));
            }
        }
    }

    let (again, _) = train_fixture(&train, None, &TrainConfig::default()).unwrap();
    assert_eq!(again, model);
}
