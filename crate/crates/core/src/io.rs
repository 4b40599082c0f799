//! JSON problem and mechanism documents, schema `privbound/1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::Allocation;
use crate::mechanisms::{ComposedMechanism, Construction, Kernel, Mechanism, MechanismError};
use crate::model::{Component, ModelError, Problem, User, DEFAULT_SFRL_CONSTANT};

pub const SCHEMA: &str = "privbound/1";

#[derive(Debug, Error)]
pub enum IoError {
    /// Malformed document: bad JSON, wrong types, missing fields, ragged
    /// matrices. `at` is the (line, column) when the parser knows it.
    #[error("{path}: {message}{}", at.map(|(l, c)| format!(" (line {l}, column {c})")).unwrap_or_default())]
    Schema { path: String, at: Option<(usize, usize)>, message: String },
    #[error("unsupported schema {0:?}, expected {SCHEMA:?}")]
    Version(String),
    /// Well-formed document describing an invalid problem.
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
}

impl IoError {
    fn shape(path: String, message: String) -> Self {
        IoError::Schema { path, at: None, message }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    #[default]
    Nats,
    Bits,
}

impl Units {
    /// Converts a value in nats for display.
    pub fn show(self, nats: f64) -> f64 {
        match self {
            Units::Nats => nats,
            Units::Bits => nats / std::f64::consts::LN_2,
        }
    }
}

fn default_sfrl() -> f64 {
    DEFAULT_SFRL_CONSTANT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    #[serde(default)]
    pub log_display: Units,
    #[serde(default = "default_sfrl")]
    pub sfrl_constant: f64,
}

impl Default for Options {
    fn default() -> Self {
        Options { log_display: Units::Nats, sfrl_constant: DEFAULT_SFRL_CONSTANT }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentFile {
    pub name: String,
    /// Row-major `P(x, y)`, rows indexing `x`.
    pub matrix: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_labels: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserFile {
    pub demands: Vec<usize>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub schema: String,
    pub components: Vec<ComponentFile>,
    pub users: Vec<UserFile>,
    pub epsilon: f64,
    #[serde(default)]
    pub options: Options,
}

fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, IoError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        IoError::Schema { path, at: Some((inner.line(), inner.column())), message: inner.to_string() }
    })
}

fn check_schema(s: &str) -> Result<(), IoError> {
    if s == SCHEMA {
        Ok(())
    } else {
        Err(IoError::Version(s.to_string()))
    }
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<Self, IoError> {
        let f: ProblemFile = from_json(text)?;
        check_schema(&f.schema)?;
        for (i, c) in f.components.iter().enumerate() {
            let width = c.matrix.first().map_or(0, Vec::len);
            if c.matrix.is_empty() || width == 0 {
                return Err(IoError::shape(format!("components[{i}].matrix"), "matrix is empty".into()));
            }
            if let Some(r) = c.matrix.iter().position(|row| row.len() != width) {
                return Err(IoError::shape(
                    format!("components[{i}].matrix[{r}]"),
                    format!("row has {} entries, row 0 has {width}", c.matrix[r].len()),
                ));
            }
            for (field, labels, n) in [("x_labels", &c.x_labels, c.matrix.len()), ("y_labels", &c.y_labels, width)] {
                if let Some(l) = labels.as_ref().filter(|l| l.len() != n) {
                    return Err(IoError::shape(
                        format!("components[{i}].{field}"),
                        format!("{} labels for an alphabet of size {n}", l.len()),
                    ));
                }
            }
        }
        Ok(f)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem file serializes")
    }

    pub fn problem(&self) -> Result<Problem, IoError> {
        let components = self
            .components
            .iter()
            .map(|c| {
                Component::from_rows(&c.name, &c.matrix).map(|k| k.with_labels(c.x_labels.clone(), c.y_labels.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let users = self.users.iter().map(|u| User::new(u.demands.iter().copied(), u.weight)).collect();
        Ok(Problem::new(components, users, self.epsilon)?.with_sfrl_constant(self.options.sfrl_constant)?)
    }

    /// Document for an in-memory problem. Pruned symbols are not restored.
    pub fn from_problem(p: &Problem, log_display: Units) -> Self {
        let components = p
            .components()
            .iter()
            .map(|c| ComponentFile {
                name: c.name().to_string(),
                matrix: (0..c.nx()).map(|x| c.joint().row(x).to_vec()).collect(),
                x_labels: c.x_labels().map(<[String]>::to_vec),
                y_labels: c.y_labels().map(<[String]>::to_vec),
            })
            .collect();
        let users = p.users().iter().map(|u| UserFile { demands: u.demands().to_vec(), weight: u.weight() }).collect();
        ProblemFile {
            schema: SCHEMA.to_string(),
            components,
            users,
            epsilon: p.epsilon(),
            options: Options { log_display, sfrl_constant: p.sfrl_constant() },
        }
    }
}

/// One kernel `P(u | x, y)`; `table[x * ny + y][u]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelFile {
    pub nx: usize,
    pub ny: usize,
    pub nu: usize,
    pub table: Vec<Vec<f64>>,
}

impl KernelFile {
    fn from_kernel(k: &Kernel) -> Self {
        KernelFile {
            nx: k.nx(),
            ny: k.ny(),
            nu: k.nu(),
            table: k.table().chunks(k.nu()).map(<[f64]>::to_vec).collect(),
        }
    }

    fn kernel(&self, path: &str) -> Result<Kernel, IoError> {
        if self.table.len() != self.nx * self.ny {
            return Err(IoError::shape(
                format!("{path}.table"),
                format!("{} rows, expected nx*ny = {}", self.table.len(), self.nx * self.ny),
            ));
        }
        if let Some(r) = self.table.iter().position(|row| row.len() != self.nu) {
            return Err(IoError::shape(format!("{path}.table[{r}]"), format!("row length is not nu = {}", self.nu)));
        }
        Ok(Kernel::new(self.nx, self.ny, self.nu, self.table.concat())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentKernelFile {
    pub name: String,
    pub construction: Construction,
    pub kernel: KernelFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MechanismBody {
    Composed {
        allocation: Allocation,
        components: Vec<ComponentKernelFile>,
    },
    /// One kernel over flattened tuples; `alphabets[i] = [|X_i|, |Y_i|]`,
    /// component 0 most significant.
    Monolithic {
        alphabets: Vec<[usize; 2]>,
        kernel: KernelFile,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismFile {
    pub schema: String,
    pub mechanism: MechanismBody,
}

impl MechanismFile {
    pub fn new(p: &Problem, m: &Mechanism) -> Self {
        let mechanism = match m {
            Mechanism::Composed(c) => MechanismBody::Composed {
                allocation: c.allocation.clone(),
                components: p
                    .components()
                    .iter()
                    .zip(&c.kernels)
                    .zip(&c.tags)
                    .map(|((comp, k), t)| ComponentKernelFile {
                        name: comp.name().to_string(),
                        construction: t.clone(),
                        kernel: KernelFile::from_kernel(k),
                    })
                    .collect(),
            },
            Mechanism::Monolithic(k) => MechanismBody::Monolithic {
                alphabets: p.components().iter().map(|c| [c.nx(), c.ny()]).collect(),
                kernel: KernelFile::from_kernel(k),
            },
        };
        MechanismFile { schema: SCHEMA.to_string(), mechanism }
    }

    pub fn parse(text: &str) -> Result<Self, IoError> {
        let f: MechanismFile = from_json(text)?;
        check_schema(&f.schema)?;
        Ok(f)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mechanism file serializes")
    }

    /// Rebuilds the mechanism, checking its alphabets against `p`.
    pub fn mechanism(&self, p: &Problem) -> Result<Mechanism, IoError> {
        let expected: Vec<[usize; 2]> = p.components().iter().map(|c| [c.nx(), c.ny()]).collect();
        match &self.mechanism {
            MechanismBody::Composed { allocation, components } => {
                let got: Vec<[usize; 2]> = components.iter().map(|c| [c.kernel.nx, c.kernel.ny]).collect();
                if got != expected {
                    return Err(alphabet_mismatch(&expected, &got));
                }
                let kernels = components
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c.kernel.kernel(&format!("mechanism.components[{i}].kernel")))
                    .collect::<Result<Vec<_>, _>>()?;
                let tags = components.iter().map(|c| c.construction.clone()).collect();
                Ok(Mechanism::Composed(ComposedMechanism::new(kernels, allocation.clone(), tags)?))
            }
            MechanismBody::Monolithic { alphabets, kernel } => {
                if *alphabets != expected {
                    return Err(alphabet_mismatch(&expected, alphabets));
                }
                let k = kernel.kernel("mechanism.kernel")?;
                let (nx, ny) = expected.iter().fold((1, 1), |(a, b), [x, y]| (a * x, b * y));
                if (k.nx(), k.ny()) != (nx, ny) {
                    return Err(alphabet_mismatch(&[[nx, ny]], &[[k.nx(), k.ny()]]));
                }
                Ok(Mechanism::Monolithic(k))
            }
        }
    }
}

fn alphabet_mismatch(expected: &[[usize; 2]], got: &[[usize; 2]]) -> IoError {
    IoError::Mechanism(MechanismError::AlphabetMismatch(format!(
        "problem alphabets (|X_i|, |Y_i|) are {expected:?}, mechanism has {got:?}"
    )))
}
