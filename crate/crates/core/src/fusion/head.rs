use super::Linear;
use crate::error::Result;
use crate::rng::SplitMix64;
use crate::tensor::{Graph, Module, Param, Var};
use crate::textio::ProficiencyLabel;

/// Linear map from a fused vector to the four proficiency logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub linear: Linear,
}

impl ClassifierHead {
    pub fn new(prefix: &str, dim: usize, rng: &mut SplitMix64) -> Self {
        Self {
            linear: Linear::new(prefix, dim, ProficiencyLabel::COUNT, rng),
        }
    }

    /// Logits of shape `[4]` for a `[D]` input (or `[n, 4]` for `[n, D]`).
    pub fn forward(&self, g: &mut Graph, fused: Var) -> Result<Var> {
        self.linear.forward(g, fused)
    }

    /// Logits and the argmax label (ties go to the lower class index).
    pub fn classify(&self, g: &mut Graph, fused: Var) -> Result<(Var, ProficiencyLabel)> {
        let logits = self.forward(g, fused)?;
        let label = ProficiencyLabel::from_index(argmax(g.value(logits))).expect("head has four outputs");
        Ok((logits, label))
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

impl Module for ClassifierHead {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.linear.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.linear.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn bias_only_head_predicts_late_expert() {
        let mut rng = SplitMix64::new(0);
        let mut head = ClassifierHead::new("head", 3, &mut rng);
        head.linear.weight.value = Tensor::zeros(&[4, 3]);
        head.linear.bias.value = Tensor::vector(vec![0.0, 0.0, 0.0, 1.0]);
        let mut g = Graph::new();
        let x = g.constant(&Tensor::vector(vec![0.3, -2.0, 1.0]));
        let (_, label) = head.classify(&mut g, x).unwrap();
        assert_eq!(label, ProficiencyLabel::LateExpert);
    }

    #[test]
    fn one_hot_input_selects_matching_class() {
        let mut rng = SplitMix64::new(0);
        let mut head = ClassifierHead::new("head", 4, &mut rng);
        let mut eye = vec![0.0; 16];
        (0..4).for_each(|i| eye[i * 4 + i] = 1.0);
        head.linear.weight.value = Tensor::new(vec![4, 4], eye).unwrap();
        for c in 0..4 {
            let mut x = vec![0.0; 4];
            x[c] = 1.0;
            let mut g = Graph::new();
            let xv = g.constant(&Tensor::vector(x));
            let (_, label) = head.classify(&mut g, xv).unwrap();
            assert_eq!(label.index(), c);
        }
    }

    #[test]
    fn logits_match_dense_product() {
        let mut rng = SplitMix64::new(6);
        let mut head = ClassifierHead::new("head", 5, &mut rng);
        head.linear.bias.value = Tensor::vector(rng.normal_vec(4, 1.0));
        let x = rng.normal_vec(5, 1.0);
        let (w, b) = (head.linear.weight.value.data(), head.linear.bias.value.data());
        let mut g = Graph::new();
        let xv = g.constant(&Tensor::vector(x.clone()));
        let logits = head.forward(&mut g, xv).unwrap();
        for o in 0..4 {
            let dense: f64 = (0..5).map(|i| w[o * 5 + i] * x[i]).sum::<f64>() + b[o];
            assert!((g.value(logits)[o] - dense).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
