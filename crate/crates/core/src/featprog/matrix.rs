use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_null(&self, i: usize) -> bool {
        match self {
            ColumnData::Numeric(v) => v[i].is_none(),
            ColumnData::Categorical(v) => v[i].is_none(),
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, ColumnData::Categorical(_))
    }

    pub fn nulls(len: usize, categorical: bool) -> ColumnData {
        if categorical {
            ColumnData::Categorical(vec![None; len])
        } else {
            ColumnData::Numeric(vec![None; len])
        }
    }

    /// Text view of the column, used when one side of a concatenation is
    /// categorical.
    pub fn to_categorical(&self) -> Vec<Option<String>> {
        match self {
            ColumnData::Categorical(v) => v.clone(),
            ColumnData::Numeric(v) => v.iter().map(|x| x.map(crate::relstore::format_float)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub data: ColumnData,
}

/// Output shape of one feature query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    /// Feature columns contributed (arity, excluding row_id).
    pub n_columns: usize,
    /// Rows the query returned.
    pub rows_returned: usize,
}

/// Feature matrix aligned on a split's row ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub row_ids: Vec<usize>,
    pub columns: Vec<FeatureColumn>,
    pub declared_categoricals: BTreeSet<String>,
    pub blocks: Vec<BlockInfo>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, name: &str) -> Option<&FeatureColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Stack `other`'s rows under `self`'s. Columns are the union in
    /// first-seen order; a column that is categorical on either side becomes
    /// categorical. Row ids are renumbered 0..n.
    pub fn concat_rows(&self, other: &FeatureMatrix) -> FeatureMatrix {
        let (n1, n2) = (self.n_rows(), other.n_rows());
        let mut names: Vec<&str> = self.column_names();
        for c in &other.columns {
            if !names.contains(&c.name.as_str()) {
                names.push(&c.name);
            }
        }
        let columns = names
            .into_iter()
            .map(|name| {
                let a = self.column(name).map(|c| &c.data);
                let b = other.column(name).map(|c| &c.data);
                let categorical =
                    a.is_some_and(ColumnData::is_categorical) || b.is_some_and(ColumnData::is_categorical);
                let a = a.cloned().unwrap_or_else(|| ColumnData::nulls(n1, categorical));
                let b = b.cloned().unwrap_or_else(|| ColumnData::nulls(n2, categorical));
                let data = match (categorical, a, b) {
                    (false, ColumnData::Numeric(mut x), ColumnData::Numeric(y)) => {
                        x.extend(y);
                        ColumnData::Numeric(x)
                    }
                    (_, a, b) => {
                        let mut x = a.to_categorical();
                        x.extend(b.to_categorical());
                        ColumnData::Categorical(x)
                    }
                };
                FeatureColumn { name: name.to_string(), data }
            })
            .collect();
        FeatureMatrix {
            row_ids: (0..n1 + n2).collect(),
            columns,
            declared_categoricals: self.declared_categoricals.union(&other.declared_categoricals).cloned().collect(),
            blocks: self.blocks.clone(),
        }
    }

    /// Copy with columns reordered by `order` (indices into `self.columns`).
    pub fn permute_columns(&self, order: &[usize]) -> FeatureMatrix {
        let mut m = self.clone();
        m.columns = order.iter().map(|&i| self.columns[i].clone()).collect();
        m
    }
}
