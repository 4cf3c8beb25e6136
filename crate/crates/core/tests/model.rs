use aero::model::{AeroModel, ModelConfig};
use aero::params::ParamBuilder;
use aero::ParameterSet;
use candle_core::{DType, Device, Tensor};

const DEFAULT_PARAMETER_COUNT: usize = 4_335_536;

fn small() -> ModelConfig {
    ModelConfig { base_channels: 8, freq_bins: 64, attention_window: 4, ..ModelConfig::default() }
}

fn random_input(b: usize, f: usize, n: usize, seed: u64) -> Tensor {
    let dev = Device::Cpu;
    let total = b * 2 * f * n;
    let vals: Vec<f32> = (0..total)
        .map(|i| (((i as u64 + seed) * 2654435761 % 1000) as f32 / 500.0 - 1.0) * 3.0)
        .collect();
    Tensor::from_vec(vals, (b, 2, f, n), &dev).unwrap()
}

#[test]
fn default_parameter_count_is_frozen() {
    let model = AeroModel::build(&ModelConfig::default(), 0, DType::F32, &Device::Cpu).unwrap();
    assert_eq!(model.params().total_count(), DEFAULT_PARAMETER_COUNT);
    let summary = model.parameter_summary();
    assert_eq!(summary.total, DEFAULT_PARAMETER_COUNT);
    assert!(summary.to_string().contains("encoder0"));
}

#[test]
fn zero_final_layer_gives_zero_output() {
    let cfg = small();
    let model = AeroModel::build(&cfg, 1, DType::F32, &Device::Cpu).unwrap();
    let tensors = model.params().tensors().into_iter().map(|(k, t)| {
        if k.starts_with("decoder0.conv.") {
            (k, t.zeros_like().unwrap())
        } else {
            (k, t)
        }
    });
    let zeroed = AeroModel::from_params(&cfg, &ParameterSet::from_tensors(tensors).unwrap()).unwrap();
    let out = zeroed.forward(&random_input(1, 64, 6, 3)).unwrap();
    let peak = out.abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
    assert_eq!(peak, 0.0);
}

#[test]
fn output_is_bounded_and_shaped() {
    let model = AeroModel::build(&small(), 2, DType::F32, &Device::Cpu).unwrap();
    let x = random_input(2, 64, 9, 5);
    let y = model.forward(&x).unwrap();
    assert_eq!(y.dims(), x.dims());
    let peak = y.abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
    assert!(peak.is_finite() && peak < 1e4, "{peak}");
}

#[test]
fn batch_items_do_not_interact() {
    let model = AeroModel::build(&small(), 3, DType::F32, &Device::Cpu).unwrap();
    let a = random_input(1, 64, 5, 11);
    let b = random_input(1, 64, 5, 12);
    let both = model.forward(&Tensor::cat(&[&a, &b], 0).unwrap()).unwrap();
    let alone = model.forward(&a).unwrap();
    let diff = both.narrow(0, 0, 1).unwrap().sub(&alone).unwrap().abs().unwrap().max_all().unwrap();
    assert!(diff.to_scalar::<f32>().unwrap() < 1e-4);
}

#[test]
fn rejects_wrong_bin_count() {
    let model = AeroModel::build(&small(), 4, DType::F32, &Device::Cpu).unwrap();
    assert!(model.forward(&random_input(1, 32, 4, 0)).is_err());
}

#[test]
fn snake_without_ftb_builds_fewer_parameters() {
    let with = AeroModel::build(&small(), 0, DType::F32, &Device::Cpu).unwrap();
    let without = AeroModel::build(&ModelConfig { use_ftb: false, ..small() }, 0, DType::F32, &Device::Cpu).unwrap();
    assert!(without.params().total_count() < with.params().total_count());
    assert!(without.params().names().all(|n| !n.contains("ftb")));
}

#[test]
fn builder_prefixes_names() {
    let pb = ParamBuilder::for_init(0, DType::F64, &Device::Cpu);
    pb.pp("a").pp("b").get(&[2], "w", aero::params::Init::Const(0.5)).unwrap();
    let params = pb.into_params();
    assert_eq!(params.names().cloned().collect::<Vec<_>>(), vec!["a.b.w".to_string()]);
}
