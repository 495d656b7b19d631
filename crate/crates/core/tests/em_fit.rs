use mvpln_core::em::{fit_mixture, FitConfig, Responsibilities};
use mvpln_core::init::{initialize, InitSpec};
use mvpln_core::selection::ari;
use mvpln_core::simgen::{generate, preset};
use mvpln_core::tensor_io::LibrarySizes;

#[test]
fn two_components_recover_labels() {
    let spec = preset("sim3").unwrap().with_n(200).with_seed(41);
    let (tensor, truth) = generate(&spec).unwrap();
    let s = LibrarySizes::unit(tensor.rp());
    let init = initialize(&tensor, &s, 2, &InitSpec::default()).unwrap();
    let fit = fit_mixture(&tensor, &s, &init, &FitConfig::default(), 7).unwrap();
    assert!(fit.converged);
    assert!(ari(&fit.hard_labels, &truth).unwrap() >= 0.9);
    assert!((fit.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for c in &fit.components {
        assert_eq!(c.phi[(0, 0)], 1.0);
    }
    assert!(fit.components[0].mean[(0, 0)] <= fit.components[1].mean[(0, 0)]);
    for row in fit.z.rows() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn single_component_recovers_means() {
    let spec = preset("sim1").unwrap().with_n(300).with_seed(11);
    let (tensor, _) = generate(&spec).unwrap();
    let s = LibrarySizes::unit(tensor.rp());
    let init = Responsibilities::from_labels(&vec![0; tensor.n()], 1).unwrap();
    let fit = fit_mixture(&tensor, &s, &init, &FitConfig::default(), 5).unwrap();
    let truth = &spec.components[0].mean;
    let worst = (&fit.components[0].mean - truth).abs().max();
    assert!(worst < 0.3, "largest mean error {worst}");
    assert!(fit.z.rows().iter().all(|row| row == &vec![1.0]));
    assert_eq!(fit.pi, vec![1.0]);
}
