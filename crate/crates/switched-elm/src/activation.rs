//! Hidden-layer activation functions.
//!
//! Each activation is a strategy behind the [`Activation`] trait, registered
//! by name and selected at runtime from config or the CLI. All of them map
//! any finite real scalar to a finite real scalar.

use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest exponent fed to `exp` before the result would overflow f64.
const EXP_CLAMP: f64 = 709.0;

/// A scalar activation applied to every hidden neuron.
pub trait Activation: Send + Sync {
    /// Registry name, as written in config files and on the CLI.
    fn name(&self) -> &'static str;

    /// Apply the activation to the pre-activation value `a·x + b`.
    fn apply(&self, z: f64) -> f64;
}

struct Sigmoid;

impl Activation for Sigmoid {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn apply(&self, z: f64) -> f64 {
        1.0 / (1.0 + (-z).min(EXP_CLAMP).exp())
    }
}

struct RadialBasis;

impl Activation for RadialBasis {
    fn name(&self) -> &'static str {
        "radial-basis"
    }

    fn apply(&self, z: f64) -> f64 {
        (-z * z).exp()
    }
}

struct Sine;

impl Activation for Sine {
    fn name(&self) -> &'static str {
        "sine"
    }

    fn apply(&self, z: f64) -> f64 {
        z.sin()
    }
}

struct Exponential;

impl Activation for Exponential {
    fn name(&self) -> &'static str {
        "exponential"
    }

    fn apply(&self, z: f64) -> f64 {
        // clamp keeps the output finite for any finite input
        z.min(EXP_CLAMP).exp()
    }
}

static REGISTRY: &[&dyn Activation] = &[&Sigmoid, &RadialBasis, &Sine, &Exponential];

/// Names of all registered activations.
pub fn names() -> impl Iterator<Item = &'static str> {
    REGISTRY.iter().map(|a| a.name())
}

/// A handle to a registered activation, cheap to copy and compare.
#[derive(Clone, Copy)]
pub struct ActivationKind(&'static dyn Activation);

impl ActivationKind {
    pub const SIGMOID: ActivationKind = ActivationKind(&Sigmoid);
    pub const RADIAL_BASIS: ActivationKind = ActivationKind(&RadialBasis);
    pub const SINE: ActivationKind = ActivationKind(&Sine);
    pub const EXPONENTIAL: ActivationKind = ActivationKind(&Exponential);

    /// Look an activation up by its registry name.
    pub fn by_name(name: &str) -> Result<Self> {
        REGISTRY
            .iter()
            .find(|a| a.name() == name)
            .map(|a| ActivationKind(*a))
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "activation",
                name: name.to_string(),
                known: names().collect::<Vec<_>>().join(", "),
            })
    }

    pub fn name(&self) -> &'static str {
        self.0.name()
    }

    #[inline]
    pub fn apply(&self, z: f64) -> f64 {
        self.0.apply(z)
    }
}

impl fmt::Debug for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl PartialEq for ActivationKind {
    fn eq(&self, other: &Self) -> bool {
        self.name() == other.name()
    }
}

impl Eq for ActivationKind {}

impl Serialize for ActivationKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ActivationKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        ActivationKind::by_name(&name).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_by_name() {
        for name in ["sigmoid", "radial-basis", "sine", "exponential"] {
            assert_eq!(ActivationKind::by_name(name).unwrap().name(), name);
        }
        assert!(ActivationKind::by_name("tanh").is_err());
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        assert_eq!(ActivationKind::SIGMOID.apply(0.0), 0.5);
    }

    #[test]
    fn every_activation_stays_finite() {
        let extremes = [
            0.0,
            1.0,
            -1.0,
            1e3,
            -1e3,
            f64::MAX,
            f64::MIN,
            f64::MIN_POSITIVE,
        ];
        for act in [
            ActivationKind::SIGMOID,
            ActivationKind::RADIAL_BASIS,
            ActivationKind::SINE,
            ActivationKind::EXPONENTIAL,
        ] {
            for &z in &extremes {
                let y = act.apply(z);
                assert!(y.is_finite(), "{}({z}) = {y}", act.name());
            }
        }
    }

    #[test]
    fn serde_round_trip() {
        let kind = ActivationKind::RADIAL_BASIS;
        let json = serde_json::to_string(&kind).unwrap();
        assert_eq!(json, "\"radial-basis\"");
        let back: ActivationKind = serde_json::from_str(&json).unwrap();
        assert_eq!(back, kind);
    }
}
