//! Each richer variant collapses to a simpler one when its extra part is switched off.

mod common;

use common::{bits, layout, logits, model, no_layers, prompt_set, settings, task, weights};
use dmpt::backbone::{transformer_layer_forward, zero_shot_logits, Injection};
use dmpt::prompt::{template_features, Variant};
use dmpt::tensor::concat_rows;
use dmpt::trainer::Trainer;
use dmpt::Tensor;

const SEED: u64 = 11;

#[test]
fn dpt_without_generator_layers_is_vlp() {
    let t = task(2, 1);
    let m = model(&t.class_names);
    let dpt = prompt_set(&common::PromptLayout { cavpt_layers: no_layers(), ..layout(Variant::Dpt, SEED) }, &t.class_names);
    let vlp = prompt_set(&layout(Variant::Vlp, SEED), &t.class_names);
    assert!(dpt.cavpt.is_none());
    assert_eq!(bits(&logits(&m, &dpt, &t.query[..6])), bits(&logits(&m, &vlp, &t.query[..6])));
}

#[test]
fn dpt_without_generator_layers_trains_like_vlp() {
    let t = task(2, 1);
    let m = model(&t.class_names);
    let mut runs = Vec::new();
    for l in [common::PromptLayout { cavpt_layers: no_layers(), ..layout(Variant::Dpt, SEED) }, layout(Variant::Vlp, SEED)] {
        let p = prompt_set(&l, &t.class_names);
        let mut tr = Trainer::new(&m, p, settings(2, 3), t.support.len()).unwrap();
        tr.fit(&t.support).unwrap();
        let values: Vec<Vec<f32>> = tr.prompts.parameters().iter().map(Tensor::to_vec).collect();
        runs.push((bits(&values), bits(&logits(&m, &tr.prompts, &t.query[..4]))));
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn vlp_without_visual_prompts_is_coop() {
    let t = task(2, 1);
    let m = model(&t.class_names);
    let vlp = prompt_set(&common::PromptLayout { prompt_len: 0, ..layout(Variant::Vlp, SEED) }, &t.class_names);
    let coop = prompt_set(&layout(Variant::Coop, SEED), &t.class_names);
    assert!(vlp.visual_parameters().is_empty());
    assert_eq!(bits(&logits(&m, &vlp, &t.query[..6])), bits(&logits(&m, &coop, &t.query[..6])));
}

#[test]
fn coop_with_template_context_is_zero_shot() {
    let t = task(2, 1);
    let m = model(&t.class_names);
    let coop = prompt_set(&common::PromptLayout { template_context: true, ..layout(Variant::Coop, SEED) }, &t.class_names);
    // the zero-shot pipeline straight from the encoders, no prompt machinery
    let w = weights();
    let classes = template_features(w, &common::VOCAB, &t.class_names).unwrap();
    let expect: Vec<Vec<f32>> = t.query[..6]
        .iter()
        .map(|e| {
            let x = w.image_encode(&e.image, &[], None).unwrap().feature;
            zero_shot_logits(&x, &classes, w.config.temperature).unwrap().to_vec()
        })
        .collect();
    assert_eq!(bits(&logits(&m, &coop, &t.query[..6])), bits(&expect));
    let zs = prompt_set(&layout(Variant::ZeroShot, SEED), &t.class_names);
    assert_eq!(bits(&logits(&m, &zs, &t.query[..6])), bits(&expect));
}

#[test]
fn full_chain_from_dpt_reaches_zero_shot() {
    let t = task(2, 1);
    let m = model(&t.class_names);
    let reduced = common::PromptLayout {
        cavpt_layers: no_layers(),
        prompt_len: 0,
        template_context: true,
        ..layout(Variant::Dpt, SEED)
    };
    let dpt = prompt_set(&reduced, &t.class_names);
    let zs = prompt_set(&layout(Variant::ZeroShot, SEED), &t.class_names);
    assert_eq!(bits(&logits(&m, &dpt, &t.query[..6])), bits(&logits(&m, &zs, &t.query[..6])));
}

#[test]
fn length_zero_generator_is_vlp_without_last_layer_prompts() {
    let t = task(2, 1);
    let m = model(&t.class_names);
    let layers = weights().config.visual_layers;
    let dpt = prompt_set(&common::PromptLayout { k_n: 0, ..layout(Variant::Dpt, SEED) }, &t.class_names);
    let vlp = prompt_set(&common::PromptLayout { prompt_depth: layers - 1, ..layout(Variant::Vlp, SEED) }, &t.class_names);

    assert_eq!(dpt.cavpt_length(t.num_classes()), 0);
    let plan = dpt.plan().unwrap();
    assert!(matches!(plan[layers - 1], Injection::None));
    assert!(plan[..layers - 1].iter().all(|i| matches!(i, Injection::Plain(_))));
    assert_eq!(dpt.parameters().len(), vlp.parameters().len());

    assert_eq!(bits(&logits(&m, &dpt, &t.query[..6])), bits(&logits(&m, &vlp, &t.query[..6])));
}

#[test]
fn generated_prompts_change_the_prediction() {
    // guards the equalities above against a generator that never runs
    let t = task(2, 1);
    let m = model(&t.class_names);
    let mut l = layout(Variant::Dpt, SEED);
    l.init_std = 0.5;
    let dpt = prompt_set(&l, &t.class_names);
    let off = prompt_set(&common::PromptLayout { k_n: 0, ..l.clone() }, &t.class_names);
    assert_ne!(bits(&logits(&m, &dpt, &t.query[..2])), bits(&logits(&m, &off, &t.query[..2])));
}

#[test]
fn prompt_slot_outputs_never_reach_the_next_layer() {
    let t = task(2, 1);
    let w = weights();
    let p = prompt_set(&common::PromptLayout { init_std: 0.5, ..layout(Variant::Vpt, SEED) }, &t.class_names);
    let plan = p.plan().unwrap();
    let prompts: Vec<Tensor> = plan
        .iter()
        .map(|i| match i {
            Injection::Plain(p) => p.clone(),
            _ => unreachable!("vpt uses plain prompts everywhere"),
        })
        .collect();
    let image = &t.query[0].image;
    let reference = w.image_encode(image, &plan, None).unwrap().feature.to_vec();

    // Re-run the tower by hand. Each layer sees [s; P; E]; afterwards its
    // prompt-slot outputs are overwritten with garbage and carried along
    // until the next layer puts its own prompts in those slots.
    let np = w.config.num_patches();
    let stem = w.visual_stem(image).unwrap();
    let mut carried = concat_rows(&[stem.slice_rows(0, 1).unwrap(), prompts[0].clone(), stem.slice_rows(1, np).unwrap()]).unwrap();
    let mut state = stem;
    for (layer, pr) in prompts.iter().enumerate() {
        let input = concat_rows(&[carried.slice_rows(0, 1).unwrap(), pr.clone(), carried.slice_rows(1 + pr.rows(), np).unwrap()]).unwrap();
        let raw = transformer_layer_forward(&input, &w.visual_blocks[layer], w.config.heads, None).unwrap().output;
        let garbage = Tensor::full(&[pr.rows(), raw.cols()], 1e3).unwrap();
        carried = concat_rows(&[raw.slice_rows(0, 1).unwrap(), garbage, raw.slice_rows(1 + pr.rows(), np).unwrap()]).unwrap();
        state = concat_rows(&[carried.slice_rows(0, 1).unwrap(), carried.slice_rows(1 + pr.rows(), np).unwrap()]).unwrap();
    }
    let feature = w.visual_head(&state).unwrap().to_vec();
    assert_eq!(bits(&[feature]), bits(&[reference]));
}
