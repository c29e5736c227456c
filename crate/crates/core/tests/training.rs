use tnet_core::decomp::{read_bundle, tucker_reconstruct, write_bundle, Decomposition};
use tnet_core::grad::{train_toy, train_toy_observed, NetWeights, RmsProp, ToyNetwork, ToyTask, ToyTaskConfig};
use tnet_core::tensor::{read_tensor_file, write_tensor_file};
use tnet_core::{ArchConfig, Error};

fn task(samples: usize) -> ToyTask {
    ToyTask::generate(&ToyTaskConfig {
        samples,
        ..ToyTaskConfig::default()
    })
    .unwrap()
}

/// At full rank the factorized forward pass is the dense network evaluated
/// on the reconstructed tensor, at every point along the trajectory.
#[test]
fn full_rank_training_matches_dense_forward() {
    let task = task(4);
    let arch = ArchConfig::toy();
    let net = ToyNetwork::new(&arch, &task).unwrap();
    let mut checked = 0;
    train_toy_observed(&arch, &arch.dims(), &task, 20, RmsProp::default(), |_, f, aux, loss| {
        let dense = net.loss(NetWeights::Dense(&tucker_reconstruct(f)), aux, &task)?;
        assert!((dense - loss).abs() <= 1e-6 * loss.abs().max(1e-12), "{dense} vs {loss}");
        checked += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(checked, 20);
}

#[test]
fn observer_errors_stop_training() {
    let task = task(2);
    let arch = ArchConfig::new([1, 1, 3, 1, 4, 4, 3, 3], 0).unwrap();
    let res = train_toy_observed(&arch, &arch.dims(), &task, 10, RmsProp::default(), |step, _, _, _| {
        if step == 3 {
            Err(Error::Convergence { iterations: step })
        } else {
            Ok(())
        }
    });
    assert!(matches!(res, Err(Error::Convergence { iterations: 3 })));
}

#[test]
fn different_task_seeds_give_different_runs() {
    let arch = ArchConfig::new([1, 1, 3, 1, 4, 4, 3, 3], 0).unwrap();
    let run = |seed| {
        let t = ToyTask::generate(&ToyTaskConfig {
            seed,
            samples: 2,
            ..ToyTaskConfig::default()
        })
        .unwrap();
        train_toy(&arch, &arch.dims(), &t, 5, RmsProp::default()).unwrap().losses
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}

#[test]
fn trained_factors_survive_a_bundle_round_trip() {
    let task = task(2);
    let arch = ArchConfig::new([1, 1, 3, 1, 4, 4, 3, 3], 0).unwrap();
    let out = train_toy(&arch, &[1, 1, 2, 1, 3, 3, 2, 2], &task, 5, RmsProp::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let d = Decomposition::Tucker(out.factors.clone());
    let meta = write_bundle(dir.path(), &d, 0.0, 5).unwrap();
    let (back, meta_back) = read_bundle(dir.path()).unwrap();
    assert_eq!(meta, meta_back);
    match back {
        Decomposition::Tucker(f) => assert_eq!(f, out.factors),
        Decomposition::Mps(_) => panic!("method changed"),
    }

    let path = dir.path().join("w.tnt");
    let w = tucker_reconstruct(&out.factors);
    write_tensor_file(&path, &w).unwrap();
    assert_eq!(read_tensor_file(&path).unwrap(), w);
}
