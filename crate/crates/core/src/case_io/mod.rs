//! File formats: canonical JSON cases, scenario files, injection specs and
//! reduced-network documents. MATPOWER import lives in [`matpower`].

pub mod matpower;

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Branch, Bus, BusType, NetworkCase};
use crate::powerflow::{InjectionSpec, Scenario, ScenarioLibrary};
use crate::successive::ReducedNetwork;

pub use matpower::{import_matpower, import_matpower_str, MatpowerOptions};

/// `[re, im]` pair.
pub type Pair = [f64; 2];

pub fn to_pair(z: Complex64) -> Pair {
    [z.re, z.im]
}

pub fn from_pair(p: Pair) -> Complex64 {
    Complex64::new(p[0], p[1])
}

/// Serde adapter for complex vectors as lists of `[re, im]`.
pub mod complex_vec {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Complex64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|z| [z.re, z.im])
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Complex64>, D::Error> {
        let raw = Vec::<[f64; 2]>::deserialize(d)?;
        Ok(raw
            .into_iter()
            .map(|p| Complex64::new(p[0], p[1]))
            .collect())
    }
}

/// Serde adapter for a single complex number as `[re, im]`.
pub mod complex {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(z: &Complex64, s: S) -> Result<S::Ok, S::Error> {
        [z.re, z.im].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Complex64, D::Error> {
        let p = <[f64; 2]>::deserialize(d)?;
        Ok(Complex64::new(p[0], p[1]))
    }
}

/// Serde adapter for dense complex matrices as rows of `[re, im]` pairs.
pub mod complex_matrix {
    use crate::linalg::CMatrix;
    use num_complex::Complex64;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &CMatrix, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> = (0..m.nrows())
            .map(|i| {
                (0..m.ncols())
                    .map(|j| [m[(i, j)].re, m[(i, j)].im])
                    .collect()
            })
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CMatrix, D::Error> {
        let rows = Vec::<Vec<[f64; 2]>>::deserialize(d)?;
        let n = rows.len();
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(CMatrix::from_fn(n, cols, |i, j| {
            Complex64::new(rows[i][j][0], rows[i][j][1])
        }))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusDoc {
    pub id: u64,
    #[serde(rename = "type")]
    pub bus_type: BusType,
    #[serde(default)]
    pub shunt: Pair,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injection: Option<Pair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchDoc {
    pub from: u64,
    pub to: u64,
    pub y_series: Pair,
}

/// On-disk case description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseDocument {
    pub base_mva: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_kv: Option<f64>,
    pub buses: Vec<BusDoc>,
    pub branches: Vec<BranchDoc>,
    /// Present when the buses were given the synthetic shunt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_shunt: Option<f64>,
}

impl CaseDocument {
    pub fn from_case(case: &NetworkCase) -> Self {
        CaseDocument {
            base_mva: case.base_mva,
            base_kv: case.base_kv,
            buses: case
                .buses
                .iter()
                .map(|b| BusDoc {
                    id: b.id,
                    bus_type: b.bus_type,
                    shunt: to_pair(b.shunt),
                    injection: b.injection.map(to_pair),
                    vm: b.vm,
                })
                .collect(),
            branches: case
                .branches
                .iter()
                .map(|b| BranchDoc {
                    from: b.from,
                    to: b.to,
                    y_series: to_pair(b.y_series),
                })
                .collect(),
            synthetic_shunt: case.synthetic_shunt,
        }
    }

    /// Validates and converts; adds the synthetic shunt when no bus has one.
    pub fn into_case(self) -> Result<NetworkCase> {
        for (k, b) in self.buses.iter().enumerate() {
            let finite = b
                .shunt
                .iter()
                .chain(b.injection.iter().flatten())
                .all(|x| x.is_finite());
            if !finite {
                return Err(Error::schema(format!("buses[{k}]"), "non-finite number"));
            }
            if let Some(vm) = b.vm {
                if !(vm > 0.0 && vm.is_finite()) {
                    return Err(Error::schema(format!("buses[{k}].vm"), "must be positive"));
                }
            }
        }
        for (k, b) in self.branches.iter().enumerate() {
            if !b.y_series.iter().all(|x| x.is_finite()) {
                return Err(Error::schema(
                    format!("branches[{k}].y_series"),
                    "non-finite number",
                ));
            }
            if b.y_series == [0.0, 0.0] {
                return Err(Error::schema(
                    format!("branches[{k}].y_series"),
                    "zero series admittance",
                ));
            }
        }
        let buses = self
            .buses
            .into_iter()
            .map(|b| Bus {
                id: b.id,
                bus_type: b.bus_type,
                shunt: from_pair(b.shunt),
                injection: b.injection.map(from_pair),
                vm: b.vm,
            })
            .collect();
        let branches = self
            .branches
            .into_iter()
            .map(|b| Branch::new(b.from, b.to, from_pair(b.y_series)))
            .collect();
        let mut case = NetworkCase::new(self.base_mva, buses, branches)?;
        case.base_kv = self.base_kv;
        case.synthetic_shunt = self.synthetic_shunt;
        if case.ensure_shunt_path() {
            log::warn!(
                "case has no shunts; added {:e} pu susceptance at every bus",
                case.synthetic_shunt.unwrap_or_default()
            );
        }
        Ok(case)
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Deserializes JSON, turning serde failures into located schema errors.
pub fn from_json<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        let msg = msg.split(" at line ").next().unwrap_or(&msg).to_string();
        Error::schema(format!("{origin}:{}:{}", e.line(), e.column()), msg)
    })
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn parse_case_str(text: &str, origin: &str) -> Result<NetworkCase> {
    from_json::<CaseDocument>(text, origin)?.into_case()
}

pub fn parse_case(path: impl AsRef<Path>) -> Result<NetworkCase> {
    let path = path.as_ref();
    parse_case_str(&read_text(path)?, &path.display().to_string())
}

pub fn write_case(path: impl AsRef<Path>, case: &NetworkCase) -> Result<()> {
    write_text(path.as_ref(), &to_json(&CaseDocument::from_case(case)))
}

/// Reads a case from canonical JSON or, for `.m` files, MATPOWER.
pub fn load_case(path: impl AsRef<Path>, opts: &MatpowerOptions) -> Result<NetworkCase> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "m") {
        import_matpower(path, opts)?.into_case()
    } else {
        parse_case(path)
    }
}

/// Scenario file contents after validation against a network size.
pub fn check_scenario(s: &Scenario, n: usize, slack: usize) -> Result<()> {
    if s.v.len() != n || s.i.len() != n {
        return Err(Error::schema(
            format!("scenario '{}'", s.id),
            format!(
                "expected {n} voltages and currents, got {} and {}",
                s.v.len(),
                s.i.len()
            ),
        ));
    }
    if let Some(k) =
        s.v.iter()
            .chain(&s.i)
            .position(|z| !(z.re.is_finite() && z.im.is_finite()))
    {
        return Err(Error::schema(
            format!("scenario '{}' entry {k}", s.id),
            "non-finite value",
        ));
    }
    if s.v[slack].norm() == 0.0 {
        return Err(Error::schema(
            format!("scenario '{}'", s.id),
            "slack-bus voltage missing",
        ));
    }
    Ok(())
}

pub fn parse_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    from_json(&read_text(path)?, &path.display().to_string())
}

pub fn write_scenario(path: impl AsRef<Path>, scenario: &Scenario) -> Result<()> {
    write_text(path.as_ref(), &to_json(scenario))
}

/// Loads scenario files and checks them against an `n`-bus network.
pub fn load_scenarios<P: AsRef<Path>>(
    paths: &[P],
    n: usize,
    slack: usize,
) -> Result<ScenarioLibrary> {
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let s = parse_scenario(p)?;
        check_scenario(&s, n, slack)?;
        out.push(s);
    }
    if out.is_empty() {
        return Err(Error::EmptyScenarioLibrary);
    }
    Ok(ScenarioLibrary::new(out))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InjectionDoc {
    id: String,
    #[serde(with = "complex_vec")]
    power: Vec<Complex64>,
    vm: Vec<f64>,
    #[serde(with = "complex", default = "unit")]
    slack: Complex64,
}

fn unit() -> Complex64 {
    Complex64::new(1.0, 0.0)
}

pub fn parse_injections_str(text: &str, origin: &str) -> Result<InjectionSpec> {
    let doc: InjectionDoc = from_json(text, origin)?;
    Ok(InjectionSpec {
        id: doc.id,
        power: doc.power,
        vm: doc.vm,
        slack_voltage: doc.slack,
    })
}

pub fn parse_injections(path: impl AsRef<Path>) -> Result<InjectionSpec> {
    let path = path.as_ref();
    parse_injections_str(&read_text(path)?, &path.display().to_string())
}

pub fn write_injections(path: impl AsRef<Path>, spec: &InjectionSpec) -> Result<()> {
    let doc = InjectionDoc {
        id: spec.id.clone(),
        power: spec.power.clone(),
        vm: spec.vm.clone(),
        slack: spec.slack_voltage,
    };
    write_text(path.as_ref(), &to_json(&doc))
}

pub fn reduced_to_string(reduced: &ReducedNetwork) -> String {
    to_json(reduced)
}

pub fn write_reduced(path: impl AsRef<Path>, reduced: &ReducedNetwork) -> Result<()> {
    write_text(path.as_ref(), &reduced_to_string(reduced))
}

pub fn read_reduced(path: impl AsRef<Path>) -> Result<ReducedNetwork> {
    let path = path.as_ref();
    from_json(&read_text(path)?, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE_BUS: &str = r#"{
        "base_mva": 100,
        "buses": [
            {"id": 1, "type": "slack", "shunt": [0, 0.01]},
            {"id": 2, "type": "pq", "shunt": [0, 0.01], "injection": [-0.1, -0.02]},
            {"id": 3, "type": "pq", "shunt": [0, 0.01]}
        ],
        "branches": [
            {"from": 1, "to": 2, "y_series": [1, -5]},
            {"from": 2, "to": 3, "y_series": [1, -5]}
        ]
    }"#;

    #[test]
    fn minimal_case_parses() {
        let case = parse_case_str(THREE_BUS, "mem").unwrap();
        assert_eq!(case.n(), 3);
        assert_eq!(case.m(), 2);
        assert_eq!(case.buses[1].injection, Some(Complex64::new(-0.1, -0.02)));
    }

    #[test]
    fn two_slacks_rejected() {
        let text = THREE_BUS.replace(r#""id": 3, "type": "pq""#, r#""id": 3, "type": "slack""#);
        assert!(matches!(
            parse_case_str(&text, "mem"),
            Err(Error::MultipleSlack(_))
        ));
    }

    #[test]
    fn unknown_field_rejected_with_location() {
        let text = THREE_BUS.replace(r#""base_mva": 100,"#, r#""base_mva": 100, "colour": 1,"#);
        match parse_case_str(&text, "mem") {
            Err(Error::Schema { location, .. }) => assert!(location.starts_with("mem:2:")),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn distinct_structural_errors() {
        let dup = THREE_BUS.replace(r#""id": 3"#, r#""id": 2"#);
        assert!(matches!(
            parse_case_str(&dup, "mem"),
            Err(Error::DuplicateBus(2))
        ));
        let noslack = THREE_BUS.replace(r#""type": "slack""#, r#""type": "pq""#);
        assert!(matches!(
            parse_case_str(&noslack, "mem"),
            Err(Error::NoSlack)
        ));
        let split = THREE_BUS.replace(
            r#"{"from": 2, "to": 3, "y_series": [1, -5]}"#,
            r#"{"from": 1, "to": 2, "y_series": [1, -5]}"#,
        );
        assert!(matches!(
            parse_case_str(&split, "mem"),
            Err(Error::Disconnected { components: 2 })
        ));
    }

    #[test]
    fn case_round_trip() {
        let case = parse_case_str(THREE_BUS, "mem").unwrap();
        let text = to_json(&CaseDocument::from_case(&case));
        assert_eq!(parse_case_str(&text, "mem").unwrap(), case);
    }

    #[test]
    fn scenario_round_trip_is_bitwise() {
        let s = Scenario {
            id: "s".into(),
            v: vec![
                Complex64::new(0.1 + 0.2, 1.0 / 3.0),
                Complex64::new(-1e-300, 5e-324),
            ],
            i: vec![
                Complex64::new(std::f64::consts::PI, -0.0),
                Complex64::new(1e300, 2.5),
            ],
        };
        let back: Scenario = from_json(&to_json(&s), "mem").unwrap();
        for (a, b) in s.v.iter().chain(&s.i).zip(back.v.iter().chain(&back.i)) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
    }

    #[test]
    fn scenario_length_checked() {
        let s = Scenario {
            id: "short".into(),
            v: vec![Complex64::new(1.0, 0.0)],
            i: vec![Complex64::new(0.0, 0.0)],
        };
        assert!(check_scenario(&s, 2, 0).is_err());
        assert!(check_scenario(&s, 1, 0).is_ok());
    }

    #[test]
    fn shuntless_case_gets_synthetic_shunt() {
        let text = THREE_BUS.replace(r#""shunt": [0, 0.01]"#, r#""shunt": [0, 0]"#);
        let case = parse_case_str(&text, "mem").unwrap();
        assert!(case.synthetic_shunt.is_some());
        assert!(case.buses.iter().all(|b| b.shunt.im > 0.0));
    }
}
