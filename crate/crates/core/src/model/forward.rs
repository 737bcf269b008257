//! Float reference execution of a model graph.

use super::{LayerKind, ModelGraph};
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Run the float forward pass in the graph's stored (topological) order.
/// Output is the logits tensor (n, num_classes, h, w).
pub fn forward(graph: &ModelGraph, input: &Tensor) -> Result<Tensor> {
    let order: Vec<usize> = (0..graph.nodes.len()).collect();
    forward_in_order(graph, input, &order)
}

/// Like [`forward`], invoking `observe(node_id, output)` on every node's
/// result before intermediates are freed. Used for activation calibration.
pub fn forward_with<F: FnMut(usize, &Tensor)>(
    graph: &ModelGraph,
    input: &Tensor,
    mut observe: F,
) -> Result<Tensor> {
    validate_input(graph, input)?;
    let n = graph.nodes.len();
    let mut last_use = vec![0usize; n];
    for (id, node) in graph.nodes.iter().enumerate() {
        for &src in &node.inputs {
            last_use[src] = last_use[src].max(id);
        }
    }
    let mut values: Vec<Option<Tensor>> = vec![None; n];
    let mut output = None;
    for id in 0..n {
        let node = &graph.nodes[id];
        let result = eval_node(graph, id, &values, input)
            .map_err(|e| Error::Shape(format!("at node {}: {e}", node.name)))?;
        observe(id, &result);
        if matches!(node.kind, LayerKind::Output) {
            output = Some(result.clone());
        }
        values[id] = Some(result);
        for &src in &node.inputs {
            if last_use[src] == id {
                values[src] = None;
            }
        }
    }
    output.ok_or_else(|| Error::Structure("graph has no output node".into()))
}

/// Run the forward pass in an explicit execution order, which must be a
/// permutation of the node ids that respects the graph's edges. Any valid
/// order produces bitwise-identical output.
pub fn forward_in_order(graph: &ModelGraph, input: &Tensor, order: &[usize]) -> Result<Tensor> {
    validate_input(graph, input)?;
    validate_order(graph, order)?;

    // Free intermediates after their last consumer has run.
    let mut last_use = vec![0usize; graph.nodes.len()];
    for (pos, &id) in order.iter().enumerate() {
        for &src in &graph.nodes[id].inputs {
            last_use[src] = last_use[src].max(pos);
        }
    }

    let mut values: Vec<Option<Tensor>> = vec![None; graph.nodes.len()];
    let mut output = None;
    for (pos, &id) in order.iter().enumerate() {
        let node = &graph.nodes[id];
        let result = eval_node(graph, id, &values, input)
            .map_err(|e| Error::Shape(format!("at node {}: {e}", node.name)))?;
        if matches!(node.kind, LayerKind::Output) {
            output = Some(result.clone());
        }
        values[id] = Some(result);
        for &src in &node.inputs {
            if last_use[src] == pos {
                values[src] = None;
            }
        }
    }
    output.ok_or_else(|| Error::Structure("graph has no output node".into()))
}

fn validate_input(graph: &ModelGraph, input: &Tensor) -> Result<()> {
    let s = input.shape;
    if s.c != graph.config.in_channels {
        return Err(Error::Shape(format!(
            "input has {} channels, model expects {}",
            s.c, graph.config.in_channels
        )));
    }
    if !s.h.is_multiple_of(16) || !s.w.is_multiple_of(16) {
        return Err(Error::Shape(format!("input {}x{} must be divisible by 16", s.h, s.w)));
    }
    Ok(())
}

fn validate_order(graph: &ModelGraph, order: &[usize]) -> Result<()> {
    if order.len() != graph.nodes.len() {
        return Err(Error::Structure("execution order must cover every node".into()));
    }
    let mut seen = vec![false; graph.nodes.len()];
    for &id in order {
        for &src in &graph.nodes[id].inputs {
            if !seen[src] {
                return Err(Error::Structure(format!(
                    "execution order visits {} before its input {}",
                    graph.nodes[id].name, graph.nodes[src].name
                )));
            }
        }
        seen[id] = true;
    }
    Ok(())
}

fn eval_node(
    graph: &ModelGraph,
    id: usize,
    values: &[Option<Tensor>],
    input: &Tensor,
) -> Result<Tensor> {
    let node = &graph.nodes[id];
    let arg = |slot: usize| -> &Tensor {
        values[node.inputs[slot]].as_ref().expect("topological order guarantees inputs")
    };
    match &node.kind {
        LayerKind::Input => Ok(input.clone()),
        LayerKind::Conv3x3 { weights, bias } => {
            let conv = tensor::conv3x3(arg(0), weights)?;
            match bias {
                None => Ok(conv),
                Some(b) => add_channel_bias(conv, b),
            }
        }
        LayerKind::Conv1x1 { weights, bias } => tensor::conv1x1(arg(0), weights, bias.as_deref()),
        LayerKind::BatchNorm { gamma, beta, mean, var, eps } => {
            tensor::batch_norm(arg(0), gamma, beta, mean, var, *eps)
        }
        LayerKind::Relu => tensor::relu(arg(0)),
        LayerKind::MaxPool2x2 => tensor::maxpool2x2(arg(0)),
        LayerKind::UpsampleNearest2x => tensor::upsample_nearest2x(arg(0)),
        LayerKind::TConv2x2 { weights, bias } => tensor::tconv2x2(arg(0), weights, bias),
        LayerKind::Concat => tensor::concat(arg(0), arg(1)),
        LayerKind::Output => Ok(arg(0).clone()),
    }
}

fn add_channel_bias(t: Tensor, bias: &[f32]) -> Result<Tensor> {
    let s = t.shape;
    if bias.len() != s.c {
        return Err(Error::Shape(format!(
            "bias length {} does not match {} channels",
            bias.len(),
            s.c
        )));
    }
    let mut data = match t.data {
        crate::tensor::TensorData::F32(v) => v,
        _ => return Err(Error::Shape("bias add requires f32 tensor".into())),
    };
    let hw = s.h * s.w;
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * hw;
            for v in &mut data[base..base + hw] {
                *v += bias[c];
            }
        }
    }
    Ok(Tensor::from_f32(s, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, init_params, ModelConfig, UpsampleMode};
    use crate::tensor::TensorShape;
    use crate::testutil::{rand_tensor, ChaCha8Rng, SeedableRng};

    fn toy(c: usize) -> ModelGraph {
        build_model(ModelConfig::new(c, UpsampleMode::Tconv).unwrap()).unwrap()
    }

    #[test]
    fn zero_network_produces_zero_logits() {
        // Freshly built graphs have all-zero weights and identity BN, so the
        // logits collapse to zero everywhere.
        let g = toy(2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, TensorShape::new(1, 3, 32, 32));
        let out = forward(&g, &x).unwrap();
        assert_eq!(out.shape, TensorShape::new(1, 2, 32, 32));
        assert!(out.as_f32().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape_follows_input() {
        let g = init_params(toy(2), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (h, w) in [(16, 16), (32, 48), (64, 64)] {
            let x = rand_tensor(&mut rng, TensorShape::new(1, 3, h, w));
            let out = forward(&g, &x).unwrap();
            assert_eq!(out.shape, TensorShape::new(1, 2, h, w));
        }
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let g = toy(2);
        let x = Tensor::zeros_f32(TensorShape::new(1, 4, 32, 32));
        assert!(matches!(forward(&g, &x), Err(Error::Shape(_))));
    }

    #[test]
    fn rejects_indivisible_spatial_dims() {
        let g = toy(2);
        let x = Tensor::zeros_f32(TensorShape::new(1, 3, 30, 32));
        assert!(matches!(forward(&g, &x), Err(Error::Shape(_))));
    }

    #[test]
    fn execution_strategy_does_not_change_output() {
        // The node chain gives this DAG a unique topological order, so a
        // second *order* cannot differ; instead compare the iterative
        // scheduler against a demand-driven recursive evaluation.
        let g = init_params(toy(2), 7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, TensorShape::new(1, 3, 32, 32));
        let a = forward(&g, &x).unwrap();

        fn eval(
            g: &ModelGraph,
            id: usize,
            x: &Tensor,
            memo: &mut Vec<Option<Tensor>>,
        ) -> Tensor {
            if let Some(v) = &memo[id] {
                return v.clone();
            }
            for &src in &g.nodes[id].inputs {
                eval(g, src, x, memo);
            }
            let v = super::eval_node(g, id, memo, x).unwrap();
            memo[id] = Some(v.clone());
            v
        }
        let mut memo = vec![None; g.nodes.len()];
        let b = eval(&g, g.nodes.len() - 1, &x, &mut memo);
        assert_eq!(a.as_f32().unwrap(), b.as_f32().unwrap());
    }

    #[test]
    fn rejects_non_topological_order() {
        let g = toy(2);
        let mut order: Vec<usize> = (0..g.nodes.len()).collect();
        order.swap(1, 2);
        let x = Tensor::zeros_f32(TensorShape::new(1, 3, 16, 16));
        assert!(matches!(forward_in_order(&g, &x, &order), Err(Error::Structure(_))));
    }

    #[test]
    fn matches_manual_layer_composition() {
        // Script the c=2 network out of individual tensor ops and compare.
        let g = init_params(toy(2), 11);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, TensorShape::new(1, 3, 32, 32));
        let got = forward(&g, &x).unwrap();

        let mut values: Vec<Option<Tensor>> = vec![None; g.nodes.len()];
        for (id, node) in g.nodes.iter().enumerate() {
            let v = match &node.kind {
                LayerKind::Input => x.clone(),
                LayerKind::Conv3x3 { weights, bias } => {
                    assert!(bias.is_none());
                    tensor::conv3x3(values[node.inputs[0]].as_ref().unwrap(), weights).unwrap()
                }
                LayerKind::Conv1x1 { weights, bias } => tensor::conv1x1(
                    values[node.inputs[0]].as_ref().unwrap(),
                    weights,
                    bias.as_deref(),
                )
                .unwrap(),
                LayerKind::BatchNorm { gamma, beta, mean, var, eps } => tensor::batch_norm(
                    values[node.inputs[0]].as_ref().unwrap(),
                    gamma,
                    beta,
                    mean,
                    var,
                    *eps,
                )
                .unwrap(),
                LayerKind::Relu => {
                    tensor::relu(values[node.inputs[0]].as_ref().unwrap()).unwrap()
                }
                LayerKind::MaxPool2x2 => {
                    tensor::maxpool2x2(values[node.inputs[0]].as_ref().unwrap()).unwrap()
                }
                LayerKind::UpsampleNearest2x => {
                    tensor::upsample_nearest2x(values[node.inputs[0]].as_ref().unwrap()).unwrap()
                }
                LayerKind::TConv2x2 { weights, bias } => {
                    tensor::tconv2x2(values[node.inputs[0]].as_ref().unwrap(), weights, bias)
                        .unwrap()
                }
                LayerKind::Concat => tensor::concat(
                    values[node.inputs[0]].as_ref().unwrap(),
                    values[node.inputs[1]].as_ref().unwrap(),
                )
                .unwrap(),
                LayerKind::Output => values[node.inputs[0]].as_ref().unwrap().clone(),
            };
            values[id] = Some(v);
        }
        let want = values.last().unwrap().as_ref().unwrap();
        assert_eq!(got.as_f32().unwrap(), want.as_f32().unwrap());
    }
}
