//! Zero-shot classification against embedded class prompts.

use serde::{Deserialize, Serialize};

use super::InferenceError;
use crate::alignment::AlignmentModel;
use crate::dataset::Sample;
use crate::numcore::{dot, Matrix};

pub const CLASS_PLACEHOLDER: &str = "{CLS}";
pub const DEFAULT_TEMPLATE: &str = "A realistic photo of a {CLS}";

/// One rendered prompt per class, in a fixed class order.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    classes: Vec<String>,
    template: String,
    prompts: Vec<String>,
}

impl PromptSet {
    pub fn new(classes: Vec<String>, template: &str) -> Result<Self, InferenceError> {
        if template.matches(CLASS_PLACEHOLDER).count() != 1 {
            return Err(InferenceError::BadTemplate(template.to_string()));
        }
        if classes.is_empty() {
            return Err(InferenceError::NoClasses);
        }
        for (i, c) in classes.iter().enumerate() {
            if classes[..i].contains(c) {
                return Err(InferenceError::DuplicateClass(c.clone()));
            }
        }
        let prompts = classes.iter().map(|c| render(template, c)).collect();
        Ok(Self {
            classes,
            template: template.to_string(),
            prompts,
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    /// The rendered prompt when `query` names a class (case-insensitive),
    /// otherwise the query itself.
    pub fn render_query(&self, query: &str) -> String {
        let q = query.trim();
        match self.classes.iter().find(|c| c.eq_ignore_ascii_case(q)) {
            Some(c) => render(&self.template, c),
            None => query.to_string(),
        }
    }
}

fn render(template: &str, class: &str) -> String {
    template.replacen(CLASS_PLACEHOLDER, class, 1)
}

/// How scaled similarities become class probabilities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbabilityRule {
    /// `softmax(exp(tau) · cos)`.
    #[default]
    Softmax,
    /// `s_i / Σ s_j` over the raw scaled similarities; only defined when
    /// every similarity is positive.
    Literal,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn class_probabilities(scaled: &[f64], rule: ProbabilityRule) -> Result<Vec<f64>, InferenceError> {
    match rule {
        ProbabilityRule::Softmax => {
            let mut p = scaled.to_vec();
            crate::numcore::matrix::softmax_in_place(&mut p);
            Ok(p)
        }
        ProbabilityRule::Literal => {
            if let Some(&s) = scaled.iter().find(|&&s| s.is_nan() || s <= 0.0) {
                return Err(InferenceError::NonPositiveSimilarity(s));
            }
            let total: f64 = scaled.iter().sum();
            Ok(scaled.iter().map(|s| s / total).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class_index: usize,
    pub probabilities: Vec<f64>,
}

/// Prompt embeddings computed once and reused for every image.
#[derive(Debug, Clone)]
pub struct ZeroShotClassifier<'a> {
    model: &'a AlignmentModel,
    prompts: &'a PromptSet,
    class_embeddings: Matrix,
    rule: ProbabilityRule,
}

impl<'a> ZeroShotClassifier<'a> {
    pub fn new(
        model: &'a AlignmentModel,
        prompts: &'a PromptSet,
        rule: ProbabilityRule,
    ) -> Result<Self, InferenceError> {
        let class_embeddings = model.embed_captions(prompts.prompts())?;
        Ok(Self {
            model,
            prompts,
            class_embeddings,
            rule,
        })
    }

    pub fn class_embeddings(&self) -> &Matrix {
        &self.class_embeddings
    }

    /// Scaled similarities of one joint-space image embedding to every class.
    pub fn scaled_similarities(&self, image_embedding: &[f64]) -> Vec<f64> {
        let scale = self.model.logit_scale();
        self.class_embeddings
            .row_iter()
            .map(|c| scale * dot(image_embedding, c))
            .collect()
    }

    /// Predicts from a joint-space embedding. Whenever every scaled
    /// similarity is positive, the argmax under both probability rules is
    /// compared and a disagreement is an error.
    pub fn predict_embedding(&self, image_embedding: &[f64]) -> Result<Prediction, InferenceError> {
        let scaled = self.scaled_similarities(image_embedding);
        let probabilities = class_probabilities(&scaled, self.rule)?;
        let class_index = argmax(&probabilities);
        if scaled.iter().all(|&s| s > 0.0) {
            let other = match self.rule {
                ProbabilityRule::Softmax => ProbabilityRule::Literal,
                ProbabilityRule::Literal => ProbabilityRule::Softmax,
            };
            let alt = argmax(&class_probabilities(&scaled, other)?);
            if alt != class_index {
                return Err(InferenceError::ArgmaxDisagreement {
                    softmax: if other == ProbabilityRule::Softmax { alt } else { class_index },
                    literal: if other == ProbabilityRule::Literal { alt } else { class_index },
                });
            }
        }
        Ok(Prediction {
            class_index,
            probabilities,
        })
    }

    /// Predicts each row of raw image inputs (rows × d_in).
    pub fn predict_inputs(&self, inputs: &Matrix) -> Result<Vec<Prediction>, InferenceError> {
        let embedded = self.model.embed_images(inputs)?;
        embedded.row_iter().map(|r| self.predict_embedding(r)).collect()
    }

    pub fn prompts(&self) -> &PromptSet {
        self.prompts
    }
}

/// Class probabilities for a single raw image input.
pub fn zero_shot_predict(
    model: &AlignmentModel,
    image_input: &[f64],
    prompts: &PromptSet,
    rule: ProbabilityRule,
) -> Result<Vec<f64>, InferenceError> {
    let classifier = ZeroShotClassifier::new(model, prompts, rule)?;
    let input = Matrix::from_rows(&[image_input]);
    let mut preds = classifier.predict_inputs(&input)?;
    Ok(preds.remove(0).probabilities)
}

/// Percentage of samples whose predicted class equals their label.
pub fn top1_accuracy(
    model: &AlignmentModel,
    samples: &[Sample],
    prompts: &PromptSet,
) -> Result<f64, InferenceError> {
    if samples.is_empty() {
        return Err(InferenceError::NoSamples);
    }
    let labels = samples
        .iter()
        .map(|s| {
            prompts
                .class_index(&s.label)
                .ok_or_else(|| InferenceError::UnknownLabel {
                    id: s.id.clone(),
                    label: s.label.clone(),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let classifier = ZeroShotClassifier::new(model, prompts, ProbabilityRule::Softmax)?;
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.features.as_slice()).collect();
    let preds = classifier.predict_inputs(&Matrix::from_rows(&rows))?;
    let correct = preds
        .iter()
        .zip(&labels)
        .filter(|(p, &l)| p.class_index == l)
        .count();
    Ok(100.0 * correct as f64 / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::ModelConfig;
    use crate::dataset::Vocab;
    use crate::encoders::EncoderMode;
    use crate::rng::{normal_vec, seeded};
    use rand::Rng as _;

    const CLASSES: [&str; 8] = ["star", "comet", "planet", "nebula", "galaxy", "moon", "asteroid", "cluster"];

    fn classes() -> Vec<String> {
        CLASSES.map(String::from).to_vec()
    }

    /// Frozen image path with an identity projection, so an image input is
    /// embedded as its own normalization.
    fn identity_image_model(seed: u64) -> AlignmentModel {
        let captions: Vec<String> = CLASSES.iter().map(|c| format!("a realistic photo of a {c}")).collect();
        let vocab = Vocab::build(captions.iter().map(|s| s.as_str()), 64);
        let config = ModelConfig {
            d_in: 8,
            hidden: 8,
            d_v: 8,
            d_t: 8,
            n: 8,
            image_mode: EncoderMode::Frozen,
            text_mode: EncoderMode::Toy,
        };
        let mut m = AlignmentModel::new(config, vocab, classes(), &mut seeded(seed)).unwrap();
        m.proj_image = Matrix::identity(8);
        m
    }

    fn sample(id: usize, label: &str, features: Vec<f64>) -> Sample {
        Sample {
            id: format!("s{id}"),
            label: label.to_string(),
            caption: None,
            split: None,
            features,
        }
    }

    #[test]
    fn prompt_set_rendering() {
        let p = PromptSet::new(classes(), DEFAULT_TEMPLATE).unwrap();
        assert_eq!(p.prompts()[0], "A realistic photo of a star");
        assert_eq!(p.render_query("Nebula"), "A realistic photo of a nebula");
        assert_eq!(p.render_query("bright things"), "bright things");
        assert!(matches!(PromptSet::new(classes(), "no slot"), Err(InferenceError::BadTemplate(_))));
        assert!(matches!(
            PromptSet::new(vec!["a".into(), "a".into()], DEFAULT_TEMPLATE),
            Err(InferenceError::DuplicateClass(_))
        ));
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(&[0.1, 0.5, 0.5, 0.2]), 1);
        assert_eq!(argmax(&[0.3, 0.3]), 0);
    }

    #[test]
    fn literal_rule_needs_positive() {
        assert!(matches!(
            class_probabilities(&[1.0, -0.5], ProbabilityRule::Literal),
            Err(InferenceError::NonPositiveSimilarity(_))
        ));
        let p = class_probabilities(&[1.0, 3.0], ProbabilityRule::Literal).unwrap();
        assert_eq!(p, vec![0.25, 0.75]);
    }

    #[test]
    fn matching_prompt_dominates() {
        let mut model = identity_image_model(1);
        model.set_tau(100f64.ln());
        let prompts = PromptSet::new(classes(), DEFAULT_TEMPLATE).unwrap();
        let clf = ZeroShotClassifier::new(&model, &prompts, ProbabilityRule::Softmax).unwrap();
        for c in 0..8 {
            let e = clf.class_embeddings().row(c).to_vec();
            let p = zero_shot_predict(&model, &e, &prompts, ProbabilityRule::Softmax).unwrap();
            assert_eq!(argmax(&p), c);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_prompts_are_uniform() {
        let mut model = identity_image_model(2);
        model.vocab = Vocab::build(std::iter::empty(), 8);
        model.text_encoder.table = model.text_encoder.table.select_rows(&[0, 1]);
        let prompts = PromptSet::new(classes(), DEFAULT_TEMPLATE).unwrap();
        let x = normal_vec(&mut seeded(5), 8, 1.0);
        let p = zero_shot_predict(&model, &x, &prompts, ProbabilityRule::Softmax).unwrap();
        for v in p {
            assert!((v - 0.125).abs() < 1e-12);
        }
    }

    #[test]
    fn permuting_classes_permutes_output() {
        let model = identity_image_model(3);
        let x = normal_vec(&mut seeded(6), 8, 1.0);
        let p = zero_shot_predict(&model, &x, &PromptSet::new(classes(), DEFAULT_TEMPLATE).unwrap(), ProbabilityRule::Softmax).unwrap();
        let mut rev = classes();
        rev.reverse();
        let q = zero_shot_predict(&model, &x, &PromptSet::new(rev, DEFAULT_TEMPLATE).unwrap(), ProbabilityRule::Softmax).unwrap();
        for i in 0..8 {
            assert!((p[i] - q[7 - i]).abs() < 1e-12);
        }
    }

    #[test]
    fn accuracy_all_correct_and_constant() {
        let model = identity_image_model(4);
        let prompts = PromptSet::new(classes(), DEFAULT_TEMPLATE).unwrap();
        let clf = ZeroShotClassifier::new(&model, &prompts, ProbabilityRule::Softmax).unwrap();
        let correct: Vec<Sample> = (0..16)
            .map(|i| sample(i, CLASSES[i % 8], clf.class_embeddings().row(i % 8).to_vec()))
            .collect();
        assert_eq!(top1_accuracy(&model, &correct, &prompts).unwrap(), 100.0);
        let constant: Vec<Sample> = (0..16)
            .map(|i| sample(i, CLASSES[i % 8], clf.class_embeddings().row(0).to_vec()))
            .collect();
        assert_eq!(top1_accuracy(&model, &constant, &prompts).unwrap(), 12.5);
    }

    #[test]
    fn unknown_label() {
        let model = identity_image_model(5);
        let prompts = PromptSet::new(classes(), DEFAULT_TEMPLATE).unwrap();
        let s = vec![sample(0, "quasar", vec![1.0; 8])];
        assert!(matches!(
            top1_accuracy(&model, &s, &prompts),
            Err(InferenceError::UnknownLabel { id, .. }) if id == "s0"
        ));
    }

    #[test]
    fn untrained_model_is_near_chance() {
        let prompts = PromptSet::new(classes(), DEFAULT_TEMPLATE).unwrap();
        let mut accs = Vec::new();
        for seed in 0..40 {
            let mut model = identity_image_model(100 + seed);
            model.config.image_mode = EncoderMode::Toy;
            model.config.hidden = 64;
            model.image_encoder = crate::encoders::ImageEncoderParams::toy(8, 64, 8, &mut seeded(seed));
            model.proj_image = crate::rng::normal_matrix(&mut seeded(seed + 7), 8, 8, 0.35);
            let mut rng = seeded(1000 + seed);
            let samples: Vec<Sample> = (0..80)
                .map(|i| sample(i, CLASSES[i % 8], normal_vec(&mut rng, 8, 1.0)))
                .collect();
            accs.push(top1_accuracy(&model, &samples, &prompts).unwrap());
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((mean - 12.5).abs() < 3.0, "mean accuracy {mean}");
    }

    #[test]
    fn both_rules_agree_on_positive_similarities() {
        let mut rng = seeded(77);
        for _ in 0..1000 {
            let scaled: Vec<f64> = (0..8).map(|_| rng.random_range(1e-3..100.0)).collect();
            let a = class_probabilities(&scaled, ProbabilityRule::Softmax).unwrap();
            let b = class_probabilities(&scaled, ProbabilityRule::Literal).unwrap();
            assert_eq!(argmax(&a), argmax(&b));
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
