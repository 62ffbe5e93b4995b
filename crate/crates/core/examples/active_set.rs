//! Steps through a token sequence showing the live regex states and the mask.

use std::time::Instant;

use negdec::{
    compile_regex, BitSet, BuildOptions, CompiledConstraints, Enforcer, MaskPath, Vocabulary,
};

fn main() -> negdec::Result<()> {
    let mut vocab = Vocabulary::byte_level();
    let ab = vocab.push_merge(b'a' as u32, b'b' as u32)?;
    let abab = vocab.push_merge(ab, ab)?;
    let dfas = vec![compile_regex("(ab)+c")?, compile_regex("ba{2,}")?];
    let c = CompiledConstraints::build(&vocab, &[], &dfas, &BuildOptions::default())?;
    let iterative = c.clone().with_mask_path(MaskPath::Iterative);
    let g = c.global().unwrap();

    let mut state = c.init_state();
    let mut blocked = BitSet::new(vocab.len());
    for w in [abab, b'b' as u32, b'a' as u32, ab] {
        c.advance(&mut state, w);
        let active: Vec<usize> = state.active.as_ref().unwrap().ones().collect();
        c.blocked_tokens(&state, &mut blocked);
        let names: Vec<String> = blocked
            .ones()
            .map(|t| String::from_utf8_lossy(vocab.token_bytes(t as u32)).into_owned())
            .collect();
        println!("after {:<6?} active {active:?} blocked {names:?}", String::from_utf8_lossy(vocab.token_bytes(w)));
    }
    println!("M = {}, init {:?}", g.total_states(), g.init_vec.ones().collect::<Vec<_>>());

    // Both mask paths give the same answer; compare their cost.
    let mut other = BitSet::new(vocab.len());
    for (name, e) in [("matmul", &c), ("iterative", &iterative)] {
        let started = Instant::now();
        for _ in 0..10_000 {
            e.blocked_tokens(&state, &mut other);
        }
        println!("{name:<9} {:.0} ns per mask", started.elapsed().as_secs_f64() * 1e5);
    }
    assert_eq!(blocked, other);
    Ok(())
}
