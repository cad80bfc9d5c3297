//! Registry of as-a-service delivery models.
//!
//! A model either supplies resources (CaaS) or consumes them (TaaS), and may
//! be a composite of already-registered models of the same kind. The catalog
//! is append-only and becomes read-only once a scenario is loaded.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::resources::{IsolationDegree, ResourceVector};

/// Identifier of a delivery model, unique within a catalog.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelId(pub String);

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ModelId {
    fn from(s: &str) -> Self {
        ModelId(s.to_owned())
    }
}

impl From<String> for ModelId {
    fn from(s: String) -> Self {
        ModelId(s)
    }
}

/// Whether a model supplies resources or consumes them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaasKind {
    CaaS,
    TaaS,
}

impl fmt::Display for MaasKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaasKind::CaaS => "caas",
            MaasKind::TaaS => "taas",
        })
    }
}

/// A delivery model over the four resource dimensions.
///
/// Suppliers carry a `supply` vector and a zero `consumption`; consumers the
/// reverse. A model with children is a composite whose footprint is the sum
/// of its children's footprints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaaSModel {
    pub id: ModelId,
    pub kind: MaasKind,
    pub label: String,
    pub supply: ResourceVector,
    pub consumption: ResourceVector,
    pub children: Vec<ModelId>,
    pub max_isolation_degree_for_sharing: IsolationDegree,
}

impl MaaSModel {
    /// A leaf supplier.
    pub fn caas(
        id: impl Into<ModelId>,
        label: impl Into<String>,
        supply: ResourceVector,
        max_isolation_degree_for_sharing: IsolationDegree,
    ) -> Self {
        MaaSModel {
            id: id.into(),
            kind: MaasKind::CaaS,
            label: label.into(),
            supply,
            consumption: ResourceVector::ZERO,
            children: Vec::new(),
            max_isolation_degree_for_sharing,
        }
    }

    /// A leaf consumer.
    pub fn taas(
        id: impl Into<ModelId>,
        label: impl Into<String>,
        consumption: ResourceVector,
        max_isolation_degree_for_sharing: IsolationDegree,
    ) -> Self {
        MaaSModel {
            id: id.into(),
            kind: MaasKind::TaaS,
            label: label.into(),
            supply: ResourceVector::ZERO,
            consumption,
            children: Vec::new(),
            max_isolation_degree_for_sharing,
        }
    }

    /// A composite of same-kind children; its own vectors stay zero.
    pub fn composite(
        id: impl Into<ModelId>,
        kind: MaasKind,
        label: impl Into<String>,
        children: Vec<ModelId>,
        max_isolation_degree_for_sharing: IsolationDegree,
    ) -> Self {
        MaaSModel {
            id: id.into(),
            kind,
            label: label.into(),
            supply: ResourceVector::ZERO,
            consumption: ResourceVector::ZERO,
            children,
            max_isolation_degree_for_sharing,
        }
    }

    pub fn is_composite(&self) -> bool {
        !self.children.is_empty()
    }

    /// Own supply or consumption, depending on kind.
    pub fn own_footprint(&self) -> ResourceVector {
        match self.kind {
            MaasKind::CaaS => self.supply,
            MaasKind::TaaS => self.consumption,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CatalogError {
    #[error("model id '{0}' is already registered")]
    DuplicateId(ModelId),
    #[error("model '{model}' references unknown child '{child}'")]
    UnknownChild { model: ModelId, child: ModelId },
    #[error("model '{model}' ({kind}) cannot contain child '{child}' of a different kind")]
    KindMismatch { model: ModelId, kind: MaasKind, child: ModelId },
    #[error("registering '{0}' would create a cycle in the composite graph")]
    CycleDetected(ModelId),
    #[error("unknown model '{0}'")]
    UnknownModel(ModelId),
}

/// Append-only registry; iteration follows registration order.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    models: Vec<MaaSModel>,
    index: HashMap<ModelId, usize>,
}

impl Catalog {
    pub fn new() -> Self {
        Catalog::default()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn contains(&self, id: &ModelId) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, id: &ModelId) -> Option<&MaaSModel> {
        self.index.get(id).map(|&i| &self.models[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &MaaSModel> {
        self.models.iter()
    }

    /// Register one model. Children must already be present and share its
    /// kind; a self-referencing child is reported as a cycle.
    pub fn register(&mut self, model: MaaSModel) -> Result<ModelId, CatalogError> {
        if self.contains(&model.id) {
            return Err(CatalogError::DuplicateId(model.id));
        }
        for child in &model.children {
            if *child == model.id {
                return Err(CatalogError::CycleDetected(model.id));
            }
            let registered = self
                .get(child)
                .ok_or_else(|| CatalogError::UnknownChild {
                    model: model.id.clone(),
                    child: child.clone(),
                })?;
            if registered.kind != model.kind {
                return Err(CatalogError::KindMismatch {
                    model: model.id.clone(),
                    kind: model.kind,
                    child: child.clone(),
                });
            }
        }
        let id = model.id.clone();
        self.index.insert(id.clone(), self.models.len());
        self.models.push(model);
        Ok(id)
    }

    /// Register a batch in any declaration order.
    ///
    /// Models are admitted once all their children are present, so forward
    /// references are fine. If a pass makes no progress, the leftovers either
    /// reference ids that exist nowhere (unknown child) or only each other
    /// (cycle).
    pub fn register_all(&mut self, models: Vec<MaaSModel>) -> Result<(), CatalogError> {
        let mut pending = models;
        while !pending.is_empty() {
            let before = pending.len();
            let mut deferred = Vec::new();
            for model in pending {
                if model.children.iter().all(|c| self.contains(c)) {
                    self.register(model)?;
                } else {
                    deferred.push(model);
                }
            }
            if deferred.len() == before {
                for model in &deferred {
                    for child in &model.children {
                        let somewhere =
                            self.contains(child) || deferred.iter().any(|m| m.id == *child);
                        if !somewhere {
                            return Err(CatalogError::UnknownChild {
                                model: model.id.clone(),
                                child: child.clone(),
                            });
                        }
                    }
                }
                return Err(CatalogError::CycleDetected(deferred[0].id.clone()));
            }
            pending = deferred;
        }
        Ok(())
    }

    /// Resource footprint of a model: a leaf's own vector, or the
    /// element-wise sum over the recursively flattened children.
    pub fn effective_footprint(&self, id: &ModelId) -> Result<ResourceVector, CatalogError> {
        let model = self
            .get(id)
            .ok_or_else(|| CatalogError::UnknownModel(id.clone()))?;
        Ok(self.footprint_of(model))
    }

    fn footprint_of(&self, model: &MaaSModel) -> ResourceVector {
        if !model.is_composite() {
            return model.own_footprint();
        }
        model
            .children
            .iter()
            .map(|c| self.footprint_of(self.get(c).expect("children are registered")))
            .fold(ResourceVector::ZERO, |acc, f| acc + f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rv(c: f64, p: f64, s: f64, r: f64) -> ResourceVector {
        ResourceVector::new(c, p, s, r)
    }

    #[test]
    fn register_and_lookup_rendering_server() {
        let mut cat = Catalog::new();
        let id = cat
            .register(MaaSModel::caas(
                "render-server",
                "rendering server",
                rv(0.0, 0.0, 0.0, 4000.0),
                IsolationDegree::Logical,
            ))
            .unwrap();
        let model = cat.get(&id).unwrap();
        assert_eq!(model.supply, rv(0.0, 0.0, 0.0, 4000.0));
        assert_eq!(model.consumption, ResourceVector::ZERO);
        assert_eq!(cat.len(), 1);
    }

    #[test]
    fn duplicate_id_rejected() {
        let mut cat = Catalog::new();
        let mk = || MaaSModel::caas("x", "x", ResourceVector::ZERO, IsolationDegree::None);
        cat.register(mk()).unwrap();
        assert_eq!(
            cat.register(mk()).unwrap_err(),
            CatalogError::DuplicateId("x".into())
        );
    }

    #[test]
    fn composite_with_missing_child_rejected() {
        let mut cat = Catalog::new();
        let err = cat
            .register(MaaSModel::composite(
                "combo",
                MaasKind::TaaS,
                "combo",
                vec!["ghost".into()],
                IsolationDegree::None,
            ))
            .unwrap_err();
        assert_eq!(
            err,
            CatalogError::UnknownChild { model: "combo".into(), child: "ghost".into() }
        );
    }

    #[test]
    fn kind_mismatch_rejected() {
        let mut cat = Catalog::new();
        cat.register(MaaSModel::caas("sup", "sup", ResourceVector::ZERO, IsolationDegree::None))
            .unwrap();
        let err = cat
            .register(MaaSModel::composite(
                "combo",
                MaasKind::TaaS,
                "combo",
                vec!["sup".into()],
                IsolationDegree::None,
            ))
            .unwrap_err();
        assert!(matches!(err, CatalogError::KindMismatch { .. }));
    }

    #[test]
    fn self_reference_is_a_cycle() {
        let mut cat = Catalog::new();
        let err = cat
            .register(MaaSModel::composite(
                "loop",
                MaasKind::TaaS,
                "loop",
                vec!["loop".into()],
                IsolationDegree::None,
            ))
            .unwrap_err();
        assert_eq!(err, CatalogError::CycleDetected("loop".into()));
    }

    #[test]
    fn register_all_handles_forward_references_and_cycles() {
        let mut cat = Catalog::new();
        // declared parent-first: only register_all can admit this
        cat.register_all(vec![
            MaaSModel::composite(
                "bundle",
                MaasKind::TaaS,
                "bundle",
                vec!["leaf".into()],
                IsolationDegree::None,
            ),
            MaaSModel::taas("leaf", "leaf", rv(1.0, 0.0, 0.0, 0.0), IsolationDegree::None),
        ])
        .unwrap();
        assert_eq!(cat.effective_footprint(&"bundle".into()).unwrap(), rv(1.0, 0.0, 0.0, 0.0));

        let mut cat = Catalog::new();
        let err = cat
            .register_all(vec![
                MaaSModel::composite("a", MaasKind::TaaS, "a", vec!["b".into()], IsolationDegree::None),
                MaaSModel::composite("b", MaasKind::TaaS, "b", vec!["a".into()], IsolationDegree::None),
            ])
            .unwrap_err();
        assert!(matches!(err, CatalogError::CycleDetected(_)));
    }

    #[test]
    fn footprint_sums_composite_children() {
        let mut cat = Catalog::new();
        cat.register(MaaSModel::taas(
            "transport",
            "transport",
            rv(100.0, 0.0, 0.0, 0.0),
            IsolationDegree::None,
        ))
        .unwrap();
        cat.register(MaaSModel::taas(
            "render",
            "cloud rendering",
            rv(0.0, 5.0, 0.0, 20.0),
            IsolationDegree::None,
        ))
        .unwrap();
        cat.register(MaaSModel::composite(
            "combo",
            MaasKind::TaaS,
            "combo",
            vec!["transport".into(), "render".into()],
            IsolationDegree::None,
        ))
        .unwrap();
        assert_eq!(
            cat.effective_footprint(&"combo".into()).unwrap(),
            rv(100.0, 5.0, 0.0, 20.0)
        );
    }

    #[test]
    fn footprint_identity_cases() {
        let mut cat = Catalog::new();
        cat.register(MaaSModel::caas(
            "leaf",
            "leaf",
            rv(3.0, 1.0, 4.0, 1.0),
            IsolationDegree::None,
        ))
        .unwrap();
        cat.register(MaaSModel::composite(
            "wrap",
            MaasKind::CaaS,
            "wrap",
            vec!["leaf".into()],
            IsolationDegree::None,
        ))
        .unwrap();
        assert_eq!(cat.effective_footprint(&"leaf".into()).unwrap(), rv(3.0, 1.0, 4.0, 1.0));
        assert_eq!(cat.effective_footprint(&"wrap".into()).unwrap(), rv(3.0, 1.0, 4.0, 1.0));
        assert_eq!(
            cat.effective_footprint(&"nope".into()).unwrap_err(),
            CatalogError::UnknownModel("nope".into())
        );
    }

    #[test]
    fn lookups_do_not_mutate() {
        let mut cat = Catalog::new();
        cat.register(MaaSModel::taas("m", "m", rv(1.0, 2.0, 3.0, 4.0), IsolationDegree::None))
            .unwrap();
        let a = serde_json::to_vec(cat.get(&"m".into()).unwrap()).unwrap();
        let _ = cat.effective_footprint(&"m".into()).unwrap();
        let b = serde_json::to_vec(cat.get(&"m".into()).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    // random two-level catalogs: composite footprint == sum of child footprints
    proptest! {
        #[test]
        fn composite_footprint_is_additive(
            leaves in proptest::collection::vec(proptest::array::uniform4(0u32..100), 1..8),
            picks in proptest::collection::vec(proptest::bits::u8::ANY, 1..8),
        ) {
            let mut cat = Catalog::new();
            for (i, amt) in leaves.iter().enumerate() {
                cat.register(MaaSModel::taas(
                    format!("leaf{i}"),
                    "leaf",
                    rv(amt[0] as f64, amt[1] as f64, amt[2] as f64, amt[3] as f64),
                    IsolationDegree::None,
                )).unwrap();
            }
            // membership (with repeats) chosen by the pick bytes
            let children: Vec<ModelId> = picks
                .iter()
                .map(|p| format!("leaf{}", (*p as usize) % leaves.len()).into())
                .collect();
            let expected = children
                .iter()
                .map(|c| cat.effective_footprint(c).unwrap())
                .fold(ResourceVector::ZERO, |acc, f| acc + f);
            cat.register(MaaSModel::composite(
                "combo", MaasKind::TaaS, "combo", children, IsolationDegree::None,
            )).unwrap();
            prop_assert_eq!(cat.effective_footprint(&"combo".into()).unwrap(), expected);
        }
    }
}
