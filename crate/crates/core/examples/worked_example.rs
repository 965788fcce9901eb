//! A depth-4 tree where only two nodes route fractionally. Shows the
//! conditional forward pass, the fractional tree and the sparse gradients.
//!
//! cargo run --example worked_example

use tel::activation::SmoothStep;
use tel::backward::{annotate_fractional_tree, build_fractional_tree, conditional_backward};
use tel::forward::{conditional_forward, reachable_stats};
use tel::matrix::Matrix;
use tel::tree::{TreeParams, TreeTopology};

/// Dot product at which the ramp equals `s`.
fn dot_for(act: &SmoothStep, s: f64) -> f64 {
    let (mut lo, mut hi) = (-act.gamma() / 2.0, act.gamma() / 2.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if act.eval(mid) < s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn main() -> tel::error::Result<()> {
    let topo = TreeTopology::new(4)?;
    let act = SmoothStep::new(1.0)?;
    // One feature fixed at 1, so each node's dot product is its own weight.
    let mut w = Matrix::zeros(topo.num_internal(), 1);
    w.fill(1.0);
    w.set(0, 0, dot_for(&act, 0.8));
    w.set(3, 0, dot_for(&act, 0.3));
    w.set(2, 0, -1.0);
    w.set(8, 0, -1.0);
    let mut o = Matrix::zeros(topo.num_leaves(), 1);
    o.set(0, 0, 1.5);
    o.set(3, 0, -2.0);
    o.set(12, 0, 2.1);
    let params = TreeParams { w, o };

    let (out, trace) = conditional_forward(&params, &topo, &act, &[1.0])?;
    let stats = reachable_stats(&trace);
    println!("output: {:.12}", out.logits[0]);
    println!(
        "reachable: {} internal nodes, {} leaves, {} fractional",
        stats.internal, stats.leaves, stats.fractional
    );
    for l in &trace.reachable_leaves {
        println!("  leaf {:2}  P = {:.3}", l.leaf, l.prob);
    }

    // dL/dT = 1 for L = T.
    let dl = [1.0];
    let mut frac = build_fractional_tree(&trace)?;
    annotate_fractional_tree(&mut frac, &params, &dl);
    println!("fractional tree:");
    for n in &frac.internal {
        println!("  node {:2}  S = {:.3}  sum_g = {:+.3}", n.node.0, n.split.left, n.sum_g);
    }
    let grads = conditional_backward(&params, &[1.0], &trace, &dl)?;
    println!("backward visited {} fractional-tree nodes", grads.visited);
    for (i, row) in grads.d_w.iter() {
        println!("  dL/dw_{i} = {:+.6}", row[0]);
    }
    for (l, row) in grads.d_o.iter() {
        println!("  dL/do_{l} = {:+.3}", row[0]);
    }
    Ok(())
}
