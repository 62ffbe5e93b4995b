//! Trains a small byte-level BPE vocabulary and round-trips text through it.

use negdec::{train_toy_bpe, Vocabulary};

const CORPUS: &str = "the cat sat on the mat. the cat ate the rat. \
    a rat sat on a cat and the mat sat still. the end.";

fn main() -> negdec::Result<()> {
    let vocab = train_toy_bpe(CORPUS.as_bytes(), 300)?;
    println!("{} tokens, mean length {:.2} bytes", vocab.len(), vocab.mean_token_len());

    for m in vocab.merges().iter().take(8) {
        let show = |w| String::from_utf8_lossy(vocab.token_bytes(w)).into_owned();
        println!("  {:?} + {:?} -> {}", show(m.left), show(m.right), m.merged);
    }

    let text = b"the rat sat on the cat";
    let ids = vocab.encode(text);
    let pieces: Vec<_> = ids.iter().map(|&w| String::from_utf8_lossy(vocab.token_bytes(w)).into_owned()).collect();
    println!("{:?} -> {ids:?}", std::str::from_utf8(text).unwrap());
    println!("pieces {pieces:?}");
    assert_eq!(vocab.decode_ids(&ids)?, text);

    // The text form loads back to the same vocabulary.
    let again = Vocabulary::from_file_str(&vocab.to_file_string())?;
    assert_eq!(again.encode(text), ids);
    Ok(())
}
