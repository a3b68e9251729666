/// Elementwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    /// tanh approximation.
    Gelu,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

impl Activation {
    pub const DEFAULT_LEAKY: Activation = Activation::LeakyRelu(0.01);

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Gelu => {
                let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            }
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(slope) => {
                if x >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Gelu => {
                let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
                let t = u.tanh();
                let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_relu_definition() {
        let a = Activation::DEFAULT_LEAKY;
        let out: Vec<f64> = [-1.0, 0.0, 2.0].iter().map(|&x| a.apply(x)).collect();
        assert_eq!(out, vec![-0.01, 0.0, 2.0]);
    }

    #[test]
    fn gelu_at_origin_is_zero() {
        assert_eq!(Activation::Gelu.apply(0.0), 0.0);
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-3.0, -0.7, 0.2, 1.4, 4.0] {
            let h = 1e-6;
            let fd = (Activation::Gelu.apply(x + h) - Activation::Gelu.apply(x - h)) / (2.0 * h);
            assert!((fd - Activation::Gelu.derivative(x)).abs() < 1e-8);
        }
    }
}
