//! Parameter and FLOP accounting.
//!
//! FLOPs count one multiply and one add per multiply-accumulate of conv and
//! fc layers. Biases and every other layer kind count zero.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::graph::{Architecture, LayerKind};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerCost {
    pub id: String,
    pub kind: &'static str,
    pub params: u64,
    pub flops: u64,
    /// `(C, H, W)`.
    pub output_shape: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub model: String,
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerCost>,
    pub total_params: u64,
    pub total_flops: u64,
}

/// Costs of `arch` evaluated at its own input shape.
pub fn cost_report(arch: &Architecture) -> Result<CostReport> {
    let outs = arch.infer_shapes()?;
    let ins = arch.input_shapes()?;
    let mut layers = Vec::with_capacity(arch.layers.len());
    for (i, l) in arch.layers.iter().enumerate() {
        let params: u64 = arch
            .param_shapes(i, ins[i])
            .iter()
            .map(|(_, s)| s.iter().product::<usize>() as u64)
            .sum();
        let o = outs[i];
        let flops = match &l.kind {
            LayerKind::Conv { filters, kernel, .. } => {
                2 * (kernel * kernel * ins[i].c() * filters * o.h() * o.w()) as u64
            }
            LayerKind::Fc { outputs } => 2 * (ins[i].sample_len() * outputs) as u64,
            _ => 0,
        };
        layers.push(LayerCost {
            id: l.id.clone(),
            kind: l.kind.name(),
            params,
            flops,
            output_shape: [o.c(), o.h(), o.w()],
        });
    }
    Ok(CostReport {
        model: arch.name.clone(),
        input_shape: arch.input_shape,
        total_params: layers.iter().map(|l| l.params).sum(),
        total_flops: layers.iter().map(|l| l.flops).sum(),
        layers,
    })
}

/// Parameter count of every conv, fc and bn_affine layer (biases included).
pub fn count_params(arch: &Architecture) -> Result<CostReport> {
    cost_report(arch)
}

/// FLOPs for a given `(C, H, W)` input.
pub fn count_flops(arch: &Architecture, input_shape: [usize; 3]) -> Result<CostReport> {
    let mut a = arch.clone();
    a.input_shape = input_shape;
    cost_report(&a)
}

impl CostReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layer", "kind", "params", "flops", "out_c", "out_h", "out_w"])?;
        for l in &self.layers {
            w.write_record([
                l.id.clone(),
                l.kind.to_string(),
                l.params.to_string(),
                l.flops.to_string(),
                l.output_shape[0].to_string(),
                l.output_shape[1].to_string(),
                l.output_shape[2].to_string(),
            ])?;
        }
        w.write_record([
            "total".to_string(),
            String::new(),
            self.total_params.to_string(),
            self.total_flops.to_string(),
            String::new(),
            String::new(),
            String::new(),
        ])?;
        w.flush().map_err(|e| csv::Error::from(e).into())
    }

    /// Aligned text table; layers without parameters or FLOPs are omitted.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<22} {:<12} {:>14} {:>16}  output", "layer", "kind", "params", "flops");
        for l in self.layers.iter().filter(|l| l.params > 0 || l.flops > 0) {
            let [c, h, w] = l.output_shape;
            let _ = writeln!(s, "{:<22} {:<12} {:>14} {:>16}  {c}x{h}x{w}", l.id, l.kind, l.params, l.flops);
        }
        let _ = writeln!(
            s,
            "total: {:.2}M params, {:.2}B FLOPs",
            self.total_params as f64 / 1e6,
            self.total_flops as f64 / 1e9
        );
        s
    }
}
