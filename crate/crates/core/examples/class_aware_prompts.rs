//! Looks inside the class-aware prompt generator for one image: which classes
//! the zero-shot ranking keeps, how each class query attends over the patch
//! grid, and what the auxiliary head predicts from the true class's row.

use dmpt::backbone::{zero_shot_logits, DualEncoderWeights, Injection, Vocabulary};
use dmpt::harness::synthetic::generate;
use dmpt::prompt::{cavpt_aux_logits, generate_cavpt, select_top_scores, PromptSet, PromptedModel};
use dmpt::trainer::{sample_few_shot, ExperimentConfig};

fn main() -> dmpt::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_overrides(&["--k_n", "3", "--init_std", "0.2"])?;
    let data = generate(&cfg.synthetic_spec(), 0)?;
    let task = sample_few_shot(&data, 4, 1)?;
    let weights = DualEncoderWeights::init(&cfg.backbone)?;
    let vocab = Vocabulary::standard();
    let model = PromptedModel::new(&weights, &vocab, &task.class_names)?;
    let prompts = PromptSet::init(&cfg.prompt_layout()?, &weights, &vocab, &task.class_names)?;
    let ex = &task.query[0];

    let x = model.plain_feature(&ex.image)?;
    let scores = zero_shot_logits(&x, &model.template_features, model.temperature())?.to_vec();
    let selection = select_top_scores(&scores, prompts.k_n, Some(ex.label))?;
    println!("image {} (class {})", ex.id, task.class_names[ex.label]);
    println!("zero-shot scores {scores:.2?}");
    println!("kept {:?}, forced ground truth {:?}", selection.indices, selection.forced_ground_truth);

    // the state arriving at the last layer, with plain prompts below it
    let plan = prompts.plan()?;
    let last = plan.len() - 1;
    let mut state = weights.visual_stem(&ex.image)?;
    for (layer, inj) in plan.iter().enumerate().take(last) {
        let p = match inj {
            Injection::Plain(p) => Some(p),
            _ => None,
        };
        state = weights.visual_layer(layer, &state, p)?.0;
    }

    let gens = prompts.cavpt.as_ref().expect("dpt has a generator");
    let params = gens.for_layer(last)?;
    let learned = model.learned_class_features(&prompts)?;
    let out = generate_cavpt(&selection, &learned.gather_rows(&selection.indices)?, &state, params)?;
    let g = weights.config.grid();
    let att = out.attention.to_vec();
    let n = out.attention.cols();
    for (row, &class) in selection.indices.iter().enumerate() {
        println!("\nquery for {}: class-token weight {:.3}", task.class_names[class], att[row * n]);
        for gy in 0..g {
            let cells: Vec<String> = (0..g).map(|gx| format!("{:.3}", att[row * n + 1 + gy * g + gx])).collect();
            println!("  {}", cells.join(" "));
        }
    }
    let aux = cavpt_aux_logits(&out, &selection, ex.label, params, prompts.aux_input)?;
    println!("\nauxiliary head logits {:.3?}", aux.to_vec());
    println!("generated prompts {:?}", out.prompts.shape());
    Ok(())
}
