//! Reference models used by the examples, tests and `validate`.

use nalgebra::{DMatrix, RowDVector};

use crate::stochkit::{MapDescriptor, ModelSpec, PhDistribution};

pub fn poisson_exponential(lambda: f64, mu: f64, d: usize) -> ModelSpec {
    ModelSpec::new(
        MapDescriptor::poisson(lambda).unwrap(),
        PhDistribution::exponential(mu).unwrap(),
        d,
    )
    .unwrap()
}

/// Two-phase service law of Example 2 (mean 8.5/29).
pub fn example2_ph() -> PhDistribution {
    example3_ph(1)
}

/// Example 3 family T(1), T(2), T(3) with α = (1/2, 1/2).
pub fn example3_ph(which: usize) -> PhDistribution {
    let t = match which {
        1 => [-5.0, 3.0, 2.0, -7.0],
        2 => [-4.0, 3.0, 2.0, -7.0],
        3 => [-4.0, 4.0, 2.0, -7.0],
        _ => panic!("example 3 has T(1), T(2), T(3)"),
    };
    PhDistribution::new(
        RowDVector::from_row_slice(&[0.5, 0.5]),
        DMatrix::from_row_slice(2, 2, &t),
    )
    .unwrap()
}

pub fn poisson_ph(lambda: f64, ph: PhDistribution, d: usize) -> ModelSpec {
    ModelSpec::new(MapDescriptor::poisson(lambda).unwrap(), ph, d).unwrap()
}

/// Two-phase MAP of Example 4; its stationary rate equals `lambda`.
pub fn example4_map(lambda: f64) -> MapDescriptor {
    let c = DMatrix::from_row_slice(
        2,
        2,
        &[-5.0 - 2.0 / 7.0 * lambda, 5.0, 7.0, -7.0 - 2.0 * lambda],
    );
    let d = DMatrix::from_row_slice(2, 2, &[2.0 / 7.0 * lambda, 0.0, 0.0, 2.0 * lambda]);
    MapDescriptor::new(c, d).unwrap()
}

pub fn example4_model(lambda: f64, mu: f64, d: usize) -> ModelSpec {
    ModelSpec::new(example4_map(lambda), PhDistribution::exponential(mu).unwrap(), d).unwrap()
}

/// A named model for test matrices.
#[derive(Clone, Debug)]
pub struct Named {
    pub name: &'static str,
    pub model: ModelSpec,
}

/// The three base models of the acceptance matrix at choice count `d`.
pub fn test_models(d: usize) -> Vec<Named> {
    vec![
        Named {
            name: "poisson-exp",
            model: poisson_exponential(0.5, 1.0, d),
        },
        Named {
            name: "poisson-ph-ex2",
            model: poisson_ph(1.0, example2_ph(), d),
        },
        Named {
            name: "map-ex4-exp",
            model: example4_model(0.5, 1.0, d),
        },
    ]
}
