use std::collections::{HashMap, HashSet};

use super::{ParamTensor, WeightStore};
use crate::blocks::join;
use crate::error::{Error, Result};
use crate::graph::ModelGraph;

fn fetch<'a>(store: &'a WeightStore, name: &str, used: &mut HashSet<String>) -> Result<&'a [f32]> {
    used.insert(name.to_string());
    store
        .get(name)
        .map(ParamTensor::data)
        .ok_or_else(|| Error::MissingWeight(name.to_string()))
}

/// Folds every inference batch norm into the convolution before it:
/// `w' = w·γ/√(σ²+ε)` and `b' = β + (b − μ)·γ/√(σ²+ε)` (with `b = 0` when the
/// convolution had no bias). The folded graph has no batch norms; every
/// convolution carries a bias instead.
///
/// Batch-norm entries in `store` that no convolution of `graph` consumes are
/// reported as [`Error::OrphanBatchNorm`].
pub fn fold_batchnorm(graph: &ModelGraph, store: &WeightStore) -> Result<(ModelGraph, WeightStore)> {
    store.validate(&graph.param_specs()).or_else(|e| match e {
        // leftover BN entries are reported more precisely below
        Error::InvalidInput(_) => Ok(()),
        other => Err(other),
    })?;
    let mut used = HashSet::new();
    let mut folded: HashMap<String, ParamTensor<f32>> = HashMap::new();
    let graph2 = graph.map_convs(|prefix, conv| {
        let wname = join(prefix, "conv.weight");
        let bname = join(prefix, "conv.bias");
        let w = fetch(store, &wname, &mut used)?;
        let dims = conv.weight_dims().to_vec();
        if !conv.bn {
            folded.insert(wname, ParamTensor::new(dims, w.to_vec())?);
            if conv.bias {
                let b = fetch(store, &bname, &mut used)?;
                folded.insert(bname, ParamTensor::new(vec![conv.c_out], b.to_vec())?);
            }
            return Ok(());
        }
        let gamma = fetch(store, &join(prefix, "bn.weight"), &mut used)?;
        let beta = fetch(store, &join(prefix, "bn.bias"), &mut used)?;
        let mean = fetch(store, &join(prefix, "bn.running_mean"), &mut used)?;
        let var = fetch(store, &join(prefix, "bn.running_var"), &mut used)?;
        let bias = if conv.bias { Some(fetch(store, &bname, &mut used)?) } else { None };
        let per_out = w.len() / conv.c_out;
        let mut w2 = Vec::with_capacity(w.len());
        let mut b2 = Vec::with_capacity(conv.c_out);
        for o in 0..conv.c_out {
            let k = gamma[o] as f64 / (var[o] as f64 + conv.bn_eps).sqrt();
            w2.extend(w[o * per_out..(o + 1) * per_out].iter().map(|&v| (v as f64 * k) as f32));
            let b = bias.map_or(0.0, |b| b[o] as f64);
            b2.push((beta[o] as f64 + (b - mean[o] as f64) * k) as f32);
        }
        folded.insert(wname, ParamTensor::new(dims, w2)?);
        folded.insert(bname, ParamTensor::new(vec![conv.c_out], b2)?);
        conv.bn = false;
        conv.bias = true;
        Ok(())
    })?;
    if let Some(orphan) = store.names().find(|n| n.contains(".bn.") && !used.contains(*n)) {
        return Err(Error::OrphanBatchNorm(orphan.to_string()));
    }
    let mut out = WeightStore::new();
    for spec in graph2.param_specs() {
        let p = folded
            .remove(&spec.name)
            .ok_or_else(|| Error::MissingWeight(spec.name.clone()))?;
        out.insert(spec.name, p)?;
    }
    Ok((graph2, out))
}
