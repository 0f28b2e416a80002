//! A small proportional bitmap font for lowercase Latin letters.
//!
//! Glyphs live on a 9-row cell: rows 0-1 hold ascenders, rows 2-6 the
//! x-height band (baseline under row 6), rows 7-8 descenders.

pub const CELL_HEIGHT: usize = 9;

/// Glyph rows, `#` is ink. Each glyph spans rows `top..top + rows.len()`.
struct GlyphDef {
    top: usize,
    rows: &'static [&'static str],
}

const fn g(top: usize, rows: &'static [&'static str]) -> GlyphDef {
    GlyphDef { top, rows }
}

const GLYPHS: [GlyphDef; 26] = [
    // a
    g(2, &[".##.", "...#", ".###", "#..#", ".###"]),
    // b
    g(0, &["#...", "#...", "###.", "#..#", "#..#", "#..#", "###."]),
    // c
    g(2, &[".###", "#...", "#...", "#...", ".###"]),
    // d
    g(0, &["...#", "...#", ".###", "#..#", "#..#", "#..#", ".###"]),
    // e
    g(2, &[".##.", "#..#", "####", "#...", ".###"]),
    // f
    g(0, &[".##", "#..", "###", "#..", "#..", "#..", "#.."]),
    // g
    g(2, &[".###", "#..#", "#..#", "#..#", ".###", "...#", ".##."]),
    // h
    g(0, &["#...", "#...", "###.", "#..#", "#..#", "#..#", "#..#"]),
    // i
    g(0, &["#", ".", "#", "#", "#", "#", "#"]),
    // j
    g(0, &[".#", "..", ".#", ".#", ".#", ".#", ".#", ".#", "#."]),
    // k
    g(0, &["#...", "#...", "#..#", "#.#.", "##..", "#.#.", "#..#"]),
    // l
    g(0, &["#.", "#.", "#.", "#.", "#.", "#.", ".#"]),
    // m
    g(2, &["####.", "#.#.#", "#.#.#", "#.#.#", "#.#.#"]),
    // n
    g(2, &["###.", "#..#", "#..#", "#..#", "#..#"]),
    // o
    g(2, &[".##.", "#..#", "#..#", "#..#", ".##."]),
    // p
    g(2, &["###.", "#..#", "#..#", "#..#", "###.", "#...", "#..."]),
    // q
    g(2, &[".###", "#..#", "#..#", "#..#", ".###", "...#", "...#"]),
    // r
    g(2, &["#.#", "##.", "#..", "#..", "#.."]),
    // s
    g(2, &[".###", "#...", ".##.", "...#", "###."]),
    // t
    g(0, &[".#.", ".#.", "###", ".#.", ".#.", ".#.", "..#"]),
    // u
    g(2, &["#..#", "#..#", "#..#", "#..#", ".###"]),
    // v
    g(2, &["#...#", "#...#", ".#.#.", ".#.#.", "..#.."]),
    // w
    g(2, &["#...#", "#...#", "#.#.#", "#.#.#", ".#.#."]),
    // x
    g(2, &["#..#", "#..#", ".##.", "#..#", "#..#"]),
    // y
    g(2, &["#..#", "#..#", "#..#", "#..#", ".###", "...#", ".##."]),
    // z
    g(2, &["####", "...#", ".##.", "#...", "####"]),
];

/// A rasterized glyph on the full cell height.
#[derive(Debug, Clone)]
pub struct Glyph {
    pub width: usize,
    /// Row-major `CELL_HEIGHT x width` ink mask.
    pub mask: Vec<bool>,
}

impl Glyph {
    #[inline]
    pub fn ink(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }
}

/// Glyph for a lowercase ASCII letter, `None` for anything else.
pub fn glyph(c: char) -> Option<Glyph> {
    if !c.is_ascii_lowercase() {
        return None;
    }
    let def = &GLYPHS[(c as u8 - b'a') as usize];
    let width = def.rows[0].len();
    let mut mask = vec![false; CELL_HEIGHT * width];
    for (r, row) in def.rows.iter().enumerate() {
        debug_assert_eq!(row.len(), width);
        for (x, ch) in row.bytes().enumerate() {
            mask[(def.top + r) * width + x] = ch == b'#';
        }
    }
    Some(Glyph { width, mask })
}
