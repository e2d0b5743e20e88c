use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kqgcot::embed::{cosine, hash_embedder};

fn word(rng: &mut ChaCha8Rng, alphabet: &[u8]) -> String {
    let n = rng.random_range(2..8);
    (0..n).map(|_| alphabet[rng.random_range(0..alphabet.len())] as char).collect()
}

fn text(rng: &mut ChaCha8Rng, alphabet: &[u8]) -> String {
    let n = rng.random_range(1..8);
    (0..n).map(|_| word(rng, alphabet)).collect::<Vec<_>>().join(" ")
}

/// Texts over disjoint alphabets share no feature, so their cosine is
/// pure collision noise with standard deviation about 1/sqrt(dim).
#[test]
fn disjoint_texts_are_nearly_orthogonal() {
    let embedder = hash_embedder(384, 0).unwrap();
    for seed in [0u64, 1, 2, 42] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cosines: Vec<f64> = (0..1000)
            .map(|_| {
                let a = embedder.embed(&text(&mut rng, b"abcdefghijklm")).unwrap();
                let b = embedder.embed(&text(&mut rng, b"nopqrstuvwxyz")).unwrap();
                cosine(&a, &b).unwrap().abs()
            })
            .collect();
        let within = cosines.iter().filter(|&&c| c <= 0.15).count();
        let mean = cosines.iter().sum::<f64>() / cosines.len() as f64;
        assert!(within >= 975, "seed {seed}: {within}/1000 within 0.15");
        assert!(mean <= 0.05, "seed {seed}: mean |cos| {mean}");
    }
}

#[test]
fn shared_structure_scores_higher_than_unrelated() {
    let e = hash_embedder(384, 0).unwrap();
    let a = e.embed("(AND r (JOIN r e))").unwrap();
    let b = e.embed("(AND r (JOIN (R r) (JOIN r e)))").unwrap();
    let c = e.embed("(ARGMAX r r)").unwrap();
    assert!(cosine(&a, &b).unwrap() > cosine(&a, &c).unwrap());
}

#[test]
fn seeds_give_different_spaces() {
    let a = hash_embedder(384, 1).unwrap().embed("music genre").unwrap();
    let b = hash_embedder(384, 2).unwrap().embed("music genre").unwrap();
    assert!(cosine(&a, &b).unwrap() < 0.5);
}
