//! Embedded 5×7 bitmap font for mark labels. Rows are top to bottom, the low
//! five bits of each byte are the columns with bit 4 leftmost.

pub const GLYPH_W: u32 = 5;
pub const GLYPH_H: u32 = 7;

const DIGITS: [[u8; 7]; 10] = [
    [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
    [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
    [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
    [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
    [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
    [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
    [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
    [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
    [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
    [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
];

const LETTERS: [[u8; 7]; 26] = [
    [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
    [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
    [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
    [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
    [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
    [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
    [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
    [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
    [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
    [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
    [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
    [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
    [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
    [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
    [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
    [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
    [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
    [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
    [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
    [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
    [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
    [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
    [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
    [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
    [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
    [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
];

const DASH: [u8; 7] = [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00];
const SPACE: [u8; 7] = [0; 7];
const UNKNOWN: [u8; 7] = [0x0E, 0x11, 0x01, 0x02, 0x04, 0x00, 0x04];

/// Glyph rows for `c`; lowercase maps to uppercase, unsupported characters to `?`.
pub fn glyph(c: char) -> &'static [u8; 7] {
    match c.to_ascii_uppercase() {
        d @ '0'..='9' => &DIGITS[d as usize - '0' as usize],
        l @ 'A'..='Z' => &LETTERS[l as usize - 'A' as usize],
        '-' => &DASH,
        ' ' => &SPACE,
        _ => &UNKNOWN,
    }
}

/// Pixel size of `text` at integer `scale` (one blank column between glyphs).
pub fn text_size(text: &str, scale: u32) -> (u32, u32) {
    let n = text.chars().count() as u32;
    if n == 0 {
        return (0, 0);
    }
    (n * GLYPH_W * scale + (n - 1) * scale, GLYPH_H * scale)
}

/// Largest scale not above the `label_scale * diameter` target whose text box
/// fits inside the disc; never below 1.
pub fn fit_scale(text: &str, diameter_px: u32, label_scale: f64) -> u32 {
    let target = ((label_scale * diameter_px as f64) / GLYPH_H as f64).floor() as u32;
    let radius = diameter_px as f64 / 2.0;
    let mut scale = target.max(1);
    while scale > 1 {
        let (w, h) = text_size(text, scale);
        let half_diag = ((w as f64 / 2.0).powi(2) + (h as f64 / 2.0).powi(2)).sqrt();
        if half_diag <= radius {
            break;
        }
        scale -= 1;
    }
    scale
}

/// Calls `plot(x, y)` for every lit pixel of `text` with its top-left at `(left, top)`.
pub fn for_each_text_pixel(text: &str, scale: u32, left: i64, top: i64, mut plot: impl FnMut(i64, i64)) {
    let s = scale as i64;
    for (i, c) in text.chars().enumerate() {
        let gx = left + i as i64 * (GLYPH_W as i64 + 1) * s;
        for (row, bits) in glyph(c).iter().enumerate() {
            for col in 0..GLYPH_W as i64 {
                if bits & (1 << (GLYPH_W as i64 - 1 - col)) == 0 {
                    continue;
                }
                for dy in 0..s {
                    for dx in 0..s {
                        plot(gx + col * s + dx, top + row as i64 * s + dy);
                    }
                }
            }
        }
    }
}
