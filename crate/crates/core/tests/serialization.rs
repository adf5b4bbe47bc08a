use serde::de::DeserializeOwned;
use serde::Serialize;

use lrd_ustat::hermite::{coeffs_closed_form, CoeffTableJson};
use lrd_ustat::kernel::{Kernel, KernelSpec};
use lrd_ustat::limit_law::{
    critical_values, limit_thm1, simulate_fbm, uniform_grid, JointHermiteEnsemble, LimitEnsemble,
};
use lrd_ustat::lrd_sim::{CovarianceFamily, LrdParams};
use lrd_ustat::ustat::{ustat_wilcoxon, UStatPath};
use lrd_ustat::verify::check_variance;

fn round_trip<T: Serialize + DeserializeOwned + PartialEq + std::fmt::Debug>(value: &T) {
    let text = serde_json::to_string(value).unwrap();
    let back: T = serde_json::from_str(&text).unwrap();
    assert_eq!(&back, value, "{text}");
}

#[test]
fn params_round_trip_and_validate() {
    round_trip(&LrdParams::fgn(0.4).unwrap());
    round_trip(&LrdParams::tweaked(0.7).unwrap());
    let p: LrdParams = serde_json::from_str(r#"{"D":0.3,"family":"tweaked"}"#).unwrap();
    assert_eq!(p.family(), CovarianceFamily::Tweaked);
    assert!(serde_json::from_str::<LrdParams>(r#"{"D":1.5,"family":"fgn"}"#).is_err());
}

#[test]
fn kernel_specs_round_trip() {
    for name in [
        "cusum",
        "wilcoxon",
        "huber:1.345",
        "tukey:4.685",
        "bump",
        "hermite:2,1",
        "zero",
    ] {
        let spec: KernelSpec = serde_json::from_str(&format!("\"{name}\"")).unwrap();
        round_trip(&spec);
        assert!(spec.build().is_ok(), "{name}");
    }
    assert!(serde_json::from_str::<KernelSpec>("\"nonsense\"").is_err());
}

#[test]
fn coefficient_table_round_trips() {
    let table = coeffs_closed_form(&Kernel::wilcoxon(), 6).unwrap();
    round_trip::<CoeffTableJson>(&table.to_json());
}

#[test]
fn ustat_path_round_trips() {
    round_trip::<UStatPath>(&ustat_wilcoxon(&[0.3, -1.0, 2.0, 0.5]).unwrap());
}

#[test]
fn limit_ensemble_and_table_round_trip() {
    let grid = uniform_grid(16);
    let joint = JointHermiteEnsemble::from_fbm(simulate_fbm(0.8, &grid, 120, 5).unwrap());
    let limit = limit_thm1(&[(1, 0, -0.28), (0, 1, 0.28)], 0.4, &joint, "wilcoxon").unwrap();
    round_trip::<LimitEnsemble>(&limit);
    round_trip(&critical_values(&limit, &[0.9, 0.95]).unwrap());
}

#[test]
fn experiment_report_round_trips() {
    let report = check_variance(1, &LrdParams::tweaked(0.5).unwrap(), &[3, 16], 0, 1).unwrap();
    round_trip(&report);
}
