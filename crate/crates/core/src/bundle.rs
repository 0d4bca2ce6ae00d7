//! The universal dataset unit: graph + features + labels + split masks,
//! with a stable JSON representation.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError};

#[derive(Debug, Error)]
pub enum BundleError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("feature matrix has {rows} rows for {num_nodes} nodes")]
    FeatureRows { rows: usize, num_nodes: usize },
    #[error("ragged feature rows: {0} vs {1}")]
    RaggedFeatures(usize, usize),
    #[error("labels length {len} does not match {num_nodes} nodes")]
    LabelLength { len: usize, num_nodes: usize },
    #[error("mask '{name}' has length {len}, expected {num_nodes}")]
    MaskLength {
        name: &'static str,
        len: usize,
        num_nodes: usize,
    },
    #[error("masks overlap at node {0}")]
    MaskOverlap(usize),
    #[error("non-finite feature value at node {0}")]
    NonFiniteFeature(usize),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Provenance block embedded in generated files: the resolved configuration
/// and seed that produced the artifact.
pub type BundleMeta = serde_json::Value;

#[derive(Debug, Clone)]
pub struct GraphBundle {
    pub graph: Graph,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
    pub meta: Option<BundleMeta>,
}

#[derive(Serialize, Deserialize)]
struct BundleJson {
    num_nodes: usize,
    edges: Vec<[usize; 2]>,
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    masks: MasksJson,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    meta: Option<BundleMeta>,
}

#[derive(Serialize, Deserialize)]
struct MasksJson {
    train: Vec<bool>,
    val: Vec<bool>,
    test: Vec<bool>,
}

impl GraphBundle {
    pub fn new(
        graph: Graph,
        features: Array2<f64>,
        labels: Vec<usize>,
        train_mask: Vec<bool>,
        val_mask: Vec<bool>,
        test_mask: Vec<bool>,
    ) -> Result<Self, BundleError> {
        let bundle = GraphBundle {
            graph,
            features,
            labels,
            train_mask,
            val_mask,
            test_mask,
            meta: None,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Number of classes, inferred as max label + 1.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }

    fn validate(&self) -> Result<(), BundleError> {
        let n = self.graph.num_nodes();
        if self.features.nrows() != n {
            return Err(BundleError::FeatureRows {
                rows: self.features.nrows(),
                num_nodes: n,
            });
        }
        if self.labels.len() != n {
            return Err(BundleError::LabelLength {
                len: self.labels.len(),
                num_nodes: n,
            });
        }
        for (name, mask) in [
            ("train", &self.train_mask),
            ("val", &self.val_mask),
            ("test", &self.test_mask),
        ] {
            if mask.len() != n {
                return Err(BundleError::MaskLength {
                    name,
                    len: mask.len(),
                    num_nodes: n,
                });
            }
        }
        for i in 0..n {
            let picks =
                self.train_mask[i] as u8 + self.val_mask[i] as u8 + self.test_mask[i] as u8;
            if picks > 1 {
                return Err(BundleError::MaskOverlap(i));
            }
        }
        for (i, row) in self.features.rows().into_iter().enumerate() {
            if !row.iter().all(|v| v.is_finite()) {
                return Err(BundleError::NonFiniteFeature(i));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, BundleError> {
        let json = BundleJson {
            num_nodes: self.num_nodes(),
            edges: self
                .graph
                .edges_undirected()
                .into_iter()
                .map(|(u, v)| [u, v])
                .collect(),
            features: self
                .features
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
            labels: self.labels.clone(),
            masks: MasksJson {
                train: self.train_mask.clone(),
                val: self.val_mask.clone(),
                test: self.test_mask.clone(),
            },
            meta: self.meta.clone(),
        };
        Ok(serde_json::to_string(&json)?)
    }

    pub fn from_json(text: &str) -> Result<Self, BundleError> {
        let json: BundleJson = serde_json::from_str(text)?;
        let graph = Graph::build(
            &json
                .edges
                .iter()
                .map(|&[u, v]| (u, v))
                .collect::<Vec<_>>(),
            json.num_nodes,
        )?;
        let f = json.features.first().map_or(0, Vec::len);
        let mut features = Array2::zeros((json.num_nodes, f));
        if json.features.len() != json.num_nodes {
            return Err(BundleError::FeatureRows {
                rows: json.features.len(),
                num_nodes: json.num_nodes,
            });
        }
        for (i, row) in json.features.iter().enumerate() {
            if row.len() != f {
                return Err(BundleError::RaggedFeatures(f, row.len()));
            }
            for (j, &v) in row.iter().enumerate() {
                features[(i, j)] = v;
            }
        }
        let mut bundle = GraphBundle::new(
            graph,
            features,
            json.labels,
            json.masks.train,
            json.masks.val,
            json.masks.test,
        )?;
        bundle.meta = json.meta;
        Ok(bundle)
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<(), BundleError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self, BundleError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny_bundle() -> GraphBundle {
        let graph = Graph::build(&[(0, 1), (1, 2)], 3).unwrap();
        GraphBundle::new(
            graph,
            array![[0.5, 1.0], [-1.0, 0.25], [2.0, 0.0]],
            vec![0, 1, 0],
            vec![true, false, false],
            vec![false, true, false],
            vec![false, false, true],
        )
        .unwrap()
    }

    #[test]
    fn json_round_trip_preserves_everything() {
        let b = tiny_bundle();
        let restored = GraphBundle::from_json(&b.to_json().unwrap()).unwrap();
        assert_eq!(restored.graph, b.graph);
        assert_eq!(restored.features, b.features);
        assert_eq!(restored.labels, b.labels);
        assert_eq!(restored.train_mask, b.train_mask);
    }

    #[test]
    fn schema_field_names_are_stable() {
        let b = tiny_bundle();
        let v: serde_json::Value = serde_json::from_str(&b.to_json().unwrap()).unwrap();
        for key in ["num_nodes", "edges", "features", "labels", "masks"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        for key in ["train", "val", "test"] {
            assert!(v["masks"].get(key).is_some(), "missing masks.{key}");
        }
        // Edges serialize with u < v.
        for e in v["edges"].as_array().unwrap() {
            let (u, w) = (e[0].as_u64().unwrap(), e[1].as_u64().unwrap());
            assert!(u < w);
        }
    }

    #[test]
    fn overlapping_masks_are_rejected() {
        let graph = Graph::build(&[(0, 1)], 2).unwrap();
        let err = GraphBundle::new(
            graph,
            array![[0.0], [0.0]],
            vec![0, 0],
            vec![true, false],
            vec![true, false],
            vec![false, false],
        );
        assert!(matches!(err, Err(BundleError::MaskOverlap(0))));
    }

    #[test]
    fn non_finite_features_are_rejected() {
        let graph = Graph::build(&[(0, 1)], 2).unwrap();
        let err = GraphBundle::new(
            graph,
            array![[f64::NAN], [0.0]],
            vec![0, 0],
            vec![false, false],
            vec![false, false],
            vec![false, false],
        );
        assert!(matches!(err, Err(BundleError::NonFiniteFeature(0))));
    }
}
