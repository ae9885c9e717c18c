use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::relstore::{ContextHandle, RelstoreError, RenamingMap, TableRenaming};

/// Build a renaming that replaces every context table name with `table_k`
/// and every column name with `col_k`.
///
/// Column names are mapped globally, so a key shared by two tables keeps a
/// shared synthetic name and joins stay expressible. Numbering follows a
/// seeded shuffle so synthetic order carries no schema information.
pub fn anonymize_schema(ctx: &ContextHandle, seed: u64) -> Result<RenamingMap, RelstoreError> {
    let manifest = ctx.manifest();
    let mut table_cols: Vec<(String, Vec<String>)> = Vec::new();
    for t in &manifest.context_tables {
        let info = ctx.get_table_info(Some(t))?;
        let schema = info.table(t).ok_or_else(|| RelstoreError::MissingTable(t.clone()))?;
        table_cols.push((t.clone(), schema.columns.iter().map(|c| c.name.clone()).collect()));
    }

    let mut names: Vec<String> = Vec::new();
    let roles = [manifest.entity_col(), manifest.timestamp_col(), manifest.target_col()];
    for n in table_cols.iter().flat_map(|(_, c)| c.iter().map(String::as_str)).chain(roles) {
        if n != "row_id" && !names.iter().any(|m| m == n) {
            names.push(n.to_string());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    names.shuffle(&mut rng);
    let col_map: HashMap<&str, String> =
        names.iter().enumerate().map(|(k, n)| (n.as_str(), format!("col_{}", k + 1))).collect();
    let synth = |n: &str| col_map.get(n).cloned().unwrap_or_else(|| n.to_string());

    let mut order: Vec<usize> = (0..table_cols.len()).collect();
    order.shuffle(&mut rng);
    let mut tables: Vec<TableRenaming> = table_cols
        .iter()
        .zip(&order)
        .map(|((t, cols), k)| TableRenaming {
            original: t.clone(),
            synthetic: format!("table_{}", k + 1),
            columns: cols.iter().map(|c| (c.clone(), synth(c))).collect(),
        })
        .collect();
    tables.sort_by(|a, b| a.synthetic.cmp(&b.synthetic));

    Ok(RenamingMap { tables, entity_col: synth(roles[0]), timestamp_col: synth(roles[1]), target_col: synth(roles[2]) })
}
