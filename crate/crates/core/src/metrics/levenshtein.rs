//! Character-level edit distance over Unicode scalar values.

use std::collections::HashMap;

/// Unit-cost insert/delete/substitute distance by the full dynamic program
/// (two rolling rows).
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

pub fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Same result as [`levenshtein`], computed with Myers' bit-vector algorithm
/// in blocks of 64 pattern characters (Hyyrö's block formulation, global
/// variant: every column enters the top block with a +1 horizontal delta).
pub fn levenshtein_fast(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    // The shorter string is the pattern: fewer blocks per column.
    if a.len() <= b.len() {
        myers_global(&a, &b)
    } else {
        myers_global(&b, &a)
    }
}

struct Block {
    pv: u64,
    mv: u64,
}

/// Advances one block by one text column; returns the horizontal delta
/// leaving the block's last row.
#[inline]
fn advance_block(block: &mut Block, eq: u64, hin: i32, last_bit: u64) -> i32 {
    let Block { pv, mv } = *block;
    let xv = eq | mv;
    let eq = if hin < 0 { eq | 1 } else { eq };
    let xh = ((eq & pv).wrapping_add(pv) ^ pv) | eq;
    let mut ph = mv | !(xh | pv);
    let mut mh = pv & xh;
    let hout = if ph & last_bit != 0 {
        1
    } else if mh & last_bit != 0 {
        -1
    } else {
        0
    };
    ph <<= 1;
    mh <<= 1;
    if hin < 0 {
        mh |= 1;
    } else if hin > 0 {
        ph |= 1;
    }
    block.pv = mh | !(xv | ph);
    block.mv = ph & xv;
    hout
}

fn myers_global(pattern: &[char], text: &[char]) -> usize {
    let m = pattern.len();
    if m == 0 {
        return text.len();
    }
    let nblocks = m.div_ceil(64);
    let mut peq: HashMap<char, Vec<u64>> = HashMap::new();
    for (i, &c) in pattern.iter().enumerate() {
        peq.entry(c).or_insert_with(|| vec![0; nblocks])[i / 64] |= 1 << (i % 64);
    }
    let zeros = vec![0u64; nblocks];
    let mut blocks: Vec<Block> = (0..nblocks).map(|_| Block { pv: !0, mv: 0 }).collect();
    let tail_bit = 1u64 << ((m - 1) % 64);
    let mut score = m as i64;
    for c in text {
        let eqs = peq.get(c).unwrap_or(&zeros);
        let mut carry = 1;
        for (bi, block) in blocks.iter_mut().enumerate() {
            let last_bit = if bi + 1 == nblocks { tail_bit } else { 1 << 63 };
            carry = advance_block(block, eqs[bi], carry, last_bit);
        }
        score += carry as i64;
    }
    score as usize
}
