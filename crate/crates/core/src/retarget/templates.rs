//! Pre-configured grasp templates and nearest-template snapping.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::hand::HandModel;
use crate::error::{FormatError, RetargetError};
use crate::format::parse_versioned;
use crate::kinematics::JointVector;
use crate::side::Side;

pub const TEMPLATE_FORMAT: u32 = 1;

const BUILTIN_TEMPLATES: &str = include_str!("../../data/templates.toml");

/// A candidate must be closer than this fraction of the incumbent's
/// distance before the snapper switches templates.
pub const SWITCH_RATIO: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateHand {
    Left,
    Right,
    Both,
}

impl TemplateHand {
    pub fn fits(&self, side: Side) -> bool {
        matches!(
            (self, side),
            (TemplateHand::Both, _) | (TemplateHand::Left, Side::Left) | (TemplateHand::Right, Side::Right)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspTemplate {
    pub name: String,
    pub hand: TemplateHand,
    pub tasks: Vec<String>,
    pub joints: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateFile {
    format: u32,
    #[serde(default)]
    templates: Vec<GraspTemplate>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraspTemplateLibrary {
    templates: Vec<GraspTemplate>,
}

/// Which templates may be matched: those usable by `side` (if given) and
/// labeled with at least one of `tasks` (all tasks if empty).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActiveSet {
    pub side: Option<Side>,
    pub tasks: Vec<String>,
}

impl ActiveSet {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn for_side(side: Side, tasks: &[String]) -> Self {
        ActiveSet {
            side: Some(side),
            tasks: tasks.to_vec(),
        }
    }

    pub fn admits(&self, t: &GraspTemplate) -> bool {
        self.side.is_none_or(|s| t.hand.fits(s))
            && (self.tasks.is_empty() || t.tasks.iter().any(|x| self.tasks.contains(x)))
    }
}

impl GraspTemplateLibrary {
    pub fn new(templates: Vec<GraspTemplate>) -> Result<Self, FormatError> {
        let mut seen = std::collections::BTreeSet::new();
        for t in &templates {
            if !seen.insert(t.name.as_str()) {
                return Err(FormatError::Invalid(format!("duplicate template `{}`", t.name)));
            }
            if t.joints.iter().any(|a| !a.is_finite()) {
                return Err(FormatError::Invalid(format!("template `{}` has non-finite joints", t.name)));
            }
        }
        if let Some(first) = templates.first() {
            if let Some(bad) = templates.iter().find(|t| t.joints.len() != first.joints.len()) {
                return Err(FormatError::Invalid(format!(
                    "template `{}` has {} joints, expected {}",
                    bad.name,
                    bad.joints.len(),
                    first.joints.len()
                )));
            }
        }
        Ok(GraspTemplateLibrary { templates })
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let file: TemplateFile = parse_versioned(text, TEMPLATE_FORMAT)?;
        Self::new(file.templates)
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn builtin() -> Self {
        Self::parse(BUILTIN_TEMPLATES).expect("shipped template library parses")
    }

    /// Checks joint count and limits against a hand model.
    pub fn validate_for(&self, model: &HandModel) -> Result<(), FormatError> {
        for t in &self.templates {
            if !model.within_limits(&t.joints) {
                return Err(FormatError::Invalid(format!(
                    "template `{}` does not fit hand model `{}` (joint count or limits)",
                    t.name,
                    model.name()
                )));
            }
        }
        Ok(())
    }

    pub fn templates(&self) -> &[GraspTemplate] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.templates.iter().map(|t| t.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.templates.iter().position(|t| t.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&GraspTemplate> {
        self.templates.iter().find(|t| t.name == name)
    }

    /// Index and distance of the nearest admitted template; ties go to the
    /// lowest library index.
    pub fn nearest(&self, q_user: &[f64], active: &ActiveSet) -> Result<(usize, f64), RetargetError> {
        let mut best: Option<(usize, f64)> = None;
        for (i, t) in self.templates.iter().enumerate() {
            if !active.admits(t) {
                continue;
            }
            // Compare squared distances: distinct values can share a sqrt.
            let d2 = squared_distance(q_user, &t.joints);
            if best.is_none_or(|(_, bd)| d2 < bd) {
                best = Some((i, d2));
            }
        }
        best.map(|(i, d2)| (i, d2.sqrt())).ok_or(RetargetError::EmptyActiveSet)
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

/// Nearest admitted template by unweighted Euclidean joint distance.
pub fn snap_to_template(
    q_user: &JointVector,
    lib: &GraspTemplateLibrary,
    active: &ActiveSet,
) -> Result<(String, JointVector), RetargetError> {
    let (i, _) = lib.nearest(q_user.angles(), active)?;
    let t = &lib.templates[i];
    Ok((t.name.clone(), JointVector::tagged(q_user.chain_name(), t.joints.clone())))
}

/// Stateful snapping with switching hysteresis.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TemplateSnapper {
    incumbent: Option<usize>,
}

impl TemplateSnapper {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn incumbent(&self) -> Option<usize> {
        self.incumbent
    }

    /// Forces the incumbent (e.g. an explicit operator template request).
    pub fn set(&mut self, index: Option<usize>) {
        self.incumbent = index;
    }

    pub fn update(
        &mut self,
        q_user: &[f64],
        lib: &GraspTemplateLibrary,
        active: &ActiveSet,
    ) -> Result<usize, RetargetError> {
        let (best, best_d) = lib.nearest(q_user, active)?;
        let keep = match self.incumbent {
            Some(inc) if inc != best && inc < lib.len() && active.admits(&lib.templates[inc]) => {
                let inc_d = distance(q_user, &lib.templates[inc].joints);
                !(best_d < SWITCH_RATIO * inc_d)
            }
            _ => false,
        };
        if !keep {
            self.incumbent = Some(best);
        }
        Ok(self.incumbent.unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lib3() -> GraspTemplateLibrary {
        let t = |name: &str, j: Vec<f64>| GraspTemplate {
            name: name.into(),
            hand: TemplateHand::Both,
            tasks: vec!["test".into()],
            joints: j,
        };
        GraspTemplateLibrary::new(vec![
            t("a", vec![0.0, 0.0]),
            t("b", vec![0.5, 0.0]),
            t("c", vec![0.0, 1.0]),
        ])
        .unwrap()
    }

    #[test]
    fn builtin_library_has_eleven_templates() {
        let lib = GraspTemplateLibrary::builtin();
        assert_eq!(lib.len(), 11);
        lib.validate_for(&HandModel::builtin()).unwrap();
        for name in [
            "stethoscope", "laryngoscope", "scalpel", "tube", "stylet", "bag-open",
            "bag-closed", "syringe", "probe", "clamp-open", "clamp-closed",
        ] {
            assert!(lib.get(name).is_some(), "{name}");
        }
    }

    #[test]
    fn exact_match_wins() {
        let lib = GraspTemplateLibrary::builtin();
        let q = JointVector::tagged("h", lib.get("bag-open").unwrap().joints.clone());
        let (name, _) = snap_to_template(&q, &lib, &ActiveSet::all()).unwrap();
        assert_eq!(name, "bag-open");
    }

    #[test]
    fn midway_tie_goes_to_lower_index() {
        let q = JointVector::tagged("h", vec![0.25, 0.0]);
        let (name, _) = snap_to_template(&q, &lib3(), &ActiveSet::all()).unwrap();
        assert_eq!(name, "a");
    }

    #[test]
    fn empty_active_set_is_error() {
        let q = JointVector::tagged("h", vec![0.0, 0.0]);
        let active = ActiveSet {
            side: None,
            tasks: vec!["nothing".into()],
        };
        assert_eq!(
            snap_to_template(&q, &lib3(), &active),
            Err(RetargetError::EmptyActiveSet)
        );
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut t = lib3().templates().to_vec();
        t[1].name = "a".into();
        assert!(GraspTemplateLibrary::new(t).is_err());
    }

    #[test]
    fn hysteresis_holds_near_boundary() {
        let lib = lib3();
        let mut s = TemplateSnapper::new();
        assert_eq!(s.update(&[0.1, 0.0], &lib, &ActiveSet::all()).unwrap(), 0);
        // b is nearer (0.24 vs 0.26) but not by the 0.9 ratio.
        assert_eq!(s.update(&[0.26, 0.0], &lib, &ActiveSet::all()).unwrap(), 0);
        assert_eq!(s.update(&[0.4, 0.0], &lib, &ActiveSet::all()).unwrap(), 1);
    }
}
