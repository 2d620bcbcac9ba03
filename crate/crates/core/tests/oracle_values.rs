//! Values frozen from an independent high-precision evaluation
//! (`oracles/model_oracle.py`): the density there is a numerical mixed
//! partial of the reliability, and cost moments are direct cubatures.

use serde_json::Value;
use warranty_core::costs::{box_moments, CostConfig, CostOptions, MomentRules, UtilityModel, WarrantyRegion};
use warranty_core::mcmc::PosteriorChain;
use warranty_core::model::{joint_distribution, joint_pdf, joint_reliability, marginal_quantile, JointKernel};
use warranty_core::model::{LifePoint, ParamVector, Scale};
use warranty_core::quadrature::Rect;

fn frozen() -> Value {
    serde_json::from_str(include_str!("oracles/frozen.json")).unwrap()
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap()
}

fn psi(v: &Value) -> ParamVector {
    let a: Vec<f64> = v.as_array().unwrap().iter().map(f).collect();
    ParamVector::new(a[0], a[1], a[2], a[3], a[4]).unwrap()
}

fn close(got: f64, want: f64, rel: f64, what: &str) {
    assert!(
        (got - want).abs() <= rel * want.abs().max(1e-300),
        "{what}: {got} vs {want} (rel {:e})",
        (got - want).abs() / want.abs()
    );
}

#[test]
fn pointwise_values() {
    for case in frozen()["points"].as_array().unwrap() {
        let p = psi(&case["psi"]);
        let pt = LifePoint {
            t: f(&case["t"]),
            u: f(&case["u"]),
        };
        close(joint_reliability(pt, &p).unwrap(), f(&case["reliability"]), 1e-10, "R");
        close(joint_pdf(pt, &p).unwrap(), f(&case["pdf"]), 1e-8, "pdf");
        close(joint_distribution(pt, &p).unwrap(), f(&case["distribution"]), 1e-9, "P");
    }
}

#[test]
fn marginal_quantiles() {
    for case in frozen()["quantiles"].as_array().unwrap() {
        let p = psi(&case["psi"]);
        let scale = match case["scale"].as_str().unwrap() {
            "age" => Scale::Age,
            _ => Scale::Usage,
        };
        let x = marginal_quantile(scale, f(&case["p"]), &p).unwrap();
        close(x, f(&case["x"]), 1e-10, "quantile");
    }
}

#[test]
fn cell_moments() {
    let rules = MomentRules::default();
    for case in frozen()["moments"].as_array().unwrap() {
        let k = JointKernel::new(&psi(&case["psi"]));
        let b: Vec<f64> = case["box"].as_array().unwrap().iter().map(f).collect();
        let m = box_moments(&k, Rect::new(b[0], b[1], b[2], b[3]), &rules, true);
        let want: Vec<f64> = case["moments"].as_array().unwrap().iter().map(f).collect();
        for (got, (w, name)) in [m.m0, m.mt, m.mu, m.mtu].into_iter().zip(want.into_iter().zip(["m0", "mt", "mu", "mtu"])) {
            close(got, w, 1e-8, name);
        }
    }
}

#[test]
fn single_draw_costs() {
    for case in frozen()["costs"].as_array().unwrap() {
        let chain = PosteriorChain::from_draws(vec![psi(&case["psi"])]).unwrap();
        let c = &case["cfg"];
        let cfg = CostConfig {
            s: f(&c["s"]),
            c: 0.0,
            a1: f(&c["s"]),
            m: f(&c["m"]),
            a2: 1.0,
            a3: 1.0,
            q1t: f(&c["q1t"]),
            q2t: f(&c["q2t"]),
            q1u: f(&c["q1u"]),
            q2u: f(&c["q2u"]),
            lt: f(&c["lt"]),
            lu: f(&c["lu"]),
        };
        let r: Vec<f64> = case["region"].as_array().unwrap().iter().map(f).collect();
        let region = WarrantyRegion::new(r[0], r[1], r[2], r[3]).unwrap();
        let b = UtilityModel::new(&chain, &cfg, &CostOptions::default())
            .unwrap()
            .breakdown(&region)
            .unwrap();
        close(b.warranty, f(&case["warranty"]), 1e-7, "warranty");
        close(b.dissatisfaction, f(&case["dissatisfaction"]), 1e-7, "dissatisfaction");
    }
}
