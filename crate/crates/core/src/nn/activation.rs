use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Tanh,
    Sigmoid,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 3] = [ActivationKind::Relu, ActivationKind::Tanh, ActivationKind::Sigmoid];

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Sigmoid => "sigmoid",
        }
    }
}

pub fn apply_activation(kind: ActivationKind, x: f64) -> f64 {
    match kind {
        ActivationKind::Relu => x.max(0.0),
        ActivationKind::Tanh => x.tanh(),
        ActivationKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
    }
}

/// Derivative at pre-activation `z`, given `a = f(z)`. Relu has slope 0 at 0.
pub(crate) fn derivative(kind: ActivationKind, z: f64, a: f64) -> f64 {
    match kind {
        ActivationKind::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        ActivationKind::Tanh => 1.0 - a * a,
        ActivationKind::Sigmoid => a * (1.0 - a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(apply_activation(ActivationKind::Sigmoid, 0.0), 0.5);
        assert_eq!(apply_activation(ActivationKind::Relu, -2.0), 0.0);
        assert_eq!(apply_activation(ActivationKind::Relu, 2.0), 2.0);
        assert_eq!(apply_activation(ActivationKind::Tanh, 0.0), 0.0);
        assert_eq!(derivative(ActivationKind::Relu, 0.0, 0.0), 0.0);
    }

    #[test]
    fn ranges() {
        for i in -200..=200 {
            let x = f64::from(i) / 20.0;
            let s = apply_activation(ActivationKind::Sigmoid, x);
            assert!(s > 0.0 && s < 1.0);
            let t = apply_activation(ActivationKind::Tanh, x);
            assert!(t > -1.0 && t < 1.0);
            assert!(apply_activation(ActivationKind::Relu, x) >= 0.0);
        }
    }
}
