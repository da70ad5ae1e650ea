//! Picks the closest prompt image for each test embedding.

use riverseg::promptsel::{cosine_similarity, match_prompt, EmbeddingVector};

fn main() -> riverseg::Result<()> {
    let prompts = vec![
        ("dam_morning".to_string(), EmbeddingVector::new(vec![0.9, 0.1, 0.0, 0.2])?),
        ("dam_noon".to_string(), EmbeddingVector::new(vec![0.2, 0.8, 0.3, 0.0])?),
        ("dam_dusk".to_string(), EmbeddingVector::new(vec![0.1, 0.2, 0.9, 0.4])?),
    ];
    let tests = [
        ("t0", EmbeddingVector::new(vec![0.8, 0.2, 0.1, 0.1])?),
        ("t1", EmbeddingVector::new(vec![0.0, 0.3, 1.0, 0.5])?),
    ];
    for (id, e) in &tests {
        let sims: Vec<String> = prompts
            .iter()
            .map(|(p, pe)| Ok(format!("{p}={:.3}", cosine_similarity(e, pe)?)))
            .collect::<riverseg::Result<_>>()?;
        let best = match_prompt(e, &prompts)?;
        println!("{id}: {} -> {} ({:.3})", sims.join(" "), best.prompt_id, best.similarity);
    }
    Ok(())
}
