//! Corpus BLEU on a few token sequences, with the clipped unigram count.
//!
//! cargo run --example bleu

use mat::data::{bleu4, modified_precision};

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn main() -> mat::Result<()> {
    let (clipped, total) = modified_precision(&[words("the the the the the the the")], &[words("the cat is on the mat")], 1)?;
    println!("clipped unigram precision: {clipped}/{total}");

    let refs = vec![words("the cat is on the mat"), words("there is a cat on the mat")];
    for cands in [
        refs.clone(),
        vec![words("the cat is on the mat"), words("a cat is on the mat")],
        vec![words("the cat"), words("there is a cat")],
        vec![words("mat on the cat"), words("cat")],
    ] {
        let shown: Vec<String> = cands.iter().map(|c| c.join(" ")).collect();
        println!("{:.4}  {:?}", bleu4(&cands, &refs)?, shown);
    }
    Ok(())
}
