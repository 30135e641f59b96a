use imac_core::circuits::Fidelity;
use imac_core::config::RunConfig;
use imac_core::data::synthetic_images;
use imac_core::network::{export_netlist, map_network, parse_netlist, read_parameters, write_parameters};
use imac_core::pipeline::{AdcMode, HeteroPipeline};
use imac_core::rng::{Seeds, Stream};
use imac_core::training::{lenet5, train_cnn_two_step, train_mlp, HyperParams, TwoStepOptions};

fn quick(epochs: usize) -> HyperParams {
    HyperParams {
        epochs,
        batch_size: 16,
        ..HyperParams::default()
    }
}

#[test]
fn mlp_survives_parameter_file_and_netlist() {
    let mut rng = Seeds::new(3).stream(Stream::Data);
    let train = synthetic_images(&mut rng, 300, 1, 28, 10).to_features();
    let test = synthetic_images(&mut rng, 100, 1, 28, 10).to_features();
    let report = train_mlp(&train, Some(&test), &[784, 16, 10], &quick(3), &Seeds::new(3)).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mlp.params");
    write_parameters(&path, &report.parameters).unwrap();
    let restored = read_parameters(&path).unwrap();
    assert_eq!(restored, report.parameters);

    let options = RunConfig::default().mlp_map_options();
    let net = map_network(&restored, &options).unwrap();
    let text = export_netlist(&net).unwrap();
    let parsed = parse_netlist(&text).unwrap();
    assert_eq!(export_netlist(&parsed).unwrap(), text);
    for i in 0..test.len() {
        let x = test.sample_f64(i);
        assert_eq!(net.infer(&x).unwrap().scores, parsed.infer(&x).unwrap().scores);
    }
    assert_eq!(net.evaluate(&test, Fidelity::Ideal).unwrap(), parsed.evaluate(&test, Fidelity::Ideal).unwrap());
}

#[test]
fn two_step_training_feeds_a_legal_pipeline() {
    let mut rng = Seeds::new(9).stream(Stream::Data);
    let train = synthetic_images(&mut rng, 96, 1, 28, 10);
    let test = synthetic_images(&mut rng, 48, 1, 28, 10);
    let cache = tempfile::tempdir().unwrap();
    let options = TwoStepOptions {
        step1: quick(1),
        step2: quick(2),
        cache_dir: Some(cache.path().to_path_buf()),
    };
    let first = train_cnn_two_step(&lenet5(), &train, &test, &options, &Seeds::new(9)).unwrap();
    let second = train_cnn_two_step(&lenet5(), &train, &test, &options, &Seeds::new(9)).unwrap();
    assert!(!first.cache_hit);
    assert!(second.cache_hit);
    assert_eq!(first.fc.parameters, second.fc.parameters);

    let config = RunConfig::default();
    let head = map_network(&first.fc.parameters, &config.head_map_options()).unwrap();
    let direct = head.evaluate(&first.derived_test, Fidelity::Ideal).unwrap();

    let bypass = HeteroPipeline::new(first.step1.cnn.clone(), head.clone(), AdcMode::Bypass, 40).unwrap();
    let eval = bypass.evaluate(&test).unwrap();
    assert!(eval.traces_legal);
    assert_eq!(eval.samples, test.len());
    assert_eq!(eval.accuracy, direct);

    let quantized = HeteroPipeline::new(first.step1.cnn.clone(), head, config.adc_mode(), 40).unwrap();
    let run = quantized.run_inference(test.image(0)).unwrap();
    assert_eq!(run.fills, 2);
    assert_eq!(run.scores.len(), 10);
    assert!(run.scores.iter().all(|&v| (0.0..=0.8).contains(&v)));
}
