//! Scratch probe: transfer trend with confounded phantoms (temporary).

use cardioseg::data::{self, AugmentationConfig, LoadOptions, Structure};
use cardioseg::net::{default_spec, init_xavier, WeightStore};
use cardioseg::phantom::{self, PhantomSpec};
use cardioseg::train::{self, TrainConfig};

#[test]
#[ignore]
fn transfer_confounded() {
    let spec = default_spec(2, 1);
    let dir = tempfile::tempdir().unwrap();

    let weights = std::path::PathBuf::from("/tmp/conf_a.fcnw");
    if !weights.exists() {
        let a = phantom::generate(&PhantomSpec::family_a(48, 16, 881).confounded()).unwrap();
        let manifest_a = phantom::write_dataset(&a, dir.path().join("a")).unwrap();
        let data_a = data::load_dataset(
            &manifest_a,
            &LoadOptions {
                cfg: AugmentationConfig::flips_and_rotations(),
                train: true,
                structure: Structure::Endo,
            },
        )
        .unwrap();
        let cfg = TrainConfig {
            max_iter: Some(300),
            seed: 11,
            ..TrainConfig::default()
        };
        let init = init_xavier(&spec, 11).unwrap();
        let (store, _) = train::train(&spec, init, &data_a.samples, &[], &cfg).unwrap();
        let eval_a = data::load_dataset(
            &manifest_a,
            &LoadOptions {
                cfg: AugmentationConfig::none(),
                train: false,
                structure: Structure::Endo,
            },
        )
        .unwrap();
        let da = train::mean_dice(&spec, &store, &eval_a.samples).unwrap().unwrap();
        println!("confounded source on its own family A: dice {da:.3}");
        store.save(&weights).unwrap();
    }
    let store = WeightStore::<f32>::load(&weights).unwrap();

    let b_train =
        phantom::generate(&PhantomSpec::family_b(48, 8, 991).confounded()).unwrap();
    let b_dev = phantom::generate(&PhantomSpec::family_b(48, 8, 1992).confounded()).unwrap();
    let m_train = phantom::write_dataset(&b_train, dir.path().join("bt")).unwrap();
    let m_dev = phantom::write_dataset(&b_dev, dir.path().join("bd")).unwrap();
    let opts = LoadOptions {
        cfg: AugmentationConfig::none(),
        train: true,
        structure: Structure::Endo,
    };
    let train_b = data::load_dataset(&m_train, &opts).unwrap();
    let dev_b = data::load_dataset(
        &m_dev,
        &LoadOptions {
            train: false,
            ..opts.clone()
        },
    )
    .unwrap();

    let d0 = train::mean_dice(&spec, &store, &dev_b.samples).unwrap().unwrap();
    println!("source on held-out confounded family B: dice {d0:.3}");

    for seed in [1u64, 2] {
        let ft_cfg = TrainConfig {
            max_iter: Some(240),
            seed,
            ..TrainConfig::fine_tune_default()
        };
        let (_, ft) =
            train::fine_tune(&spec, &weights, &train_b.samples, &dev_b.samples, &ft_cfg).unwrap();
        let xv_cfg = TrainConfig {
            max_iter: Some(240),
            seed,
            ..TrainConfig::default()
        };
        let init = init_xavier(&spec, seed).unwrap();
        let (_, xv) =
            train::train(&spec, init, &train_b.samples, &dev_b.samples, &xv_cfg).unwrap();
        let fmt = |r: &train::TrainReport| -> String {
            r.epochs
                .iter()
                .map(|e| format!("{:.2}", e.dev_dice.unwrap()))
                .collect::<Vec<_>>()
                .join(" ")
        };
        println!("seed {seed} ft dev:  {}", fmt(&ft));
        println!("seed {seed} xv dev:  {}", fmt(&xv));
    }
}
