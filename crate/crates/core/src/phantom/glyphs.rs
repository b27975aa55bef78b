//! Built-in 5x7 dot-matrix glyphs used to paint ground-truth ink.

use crate::raster::Mask;

use super::PhantomError;

pub const GLYPH_W: usize = 5;
pub const GLYPH_H: usize = 7;

/// Rows top to bottom; bit 4 is the leftmost column.
fn glyph_rows(c: char) -> Option<[u8; GLYPH_H]> {
    let rows = match c {
        ' ' => [0, 0, 0, 0, 0, 0, 0],
        'A' => [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
        'B' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110],
        'C' => [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110],
        'D' => [0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11110],
        'E' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111],
        'F' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000],
        'G' => [0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111],
        'H' => [0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
        'I' => [0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100],
        'J' => [0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100],
        'K' => [0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001],
        'L' => [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111],
        'M' => [0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001],
        'N' => [0b10001, 0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001],
        'O' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'P' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000],
        'Q' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101],
        'R' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001],
        'S' => [0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110],
        'T' => [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100],
        'U' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'V' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100],
        'W' => [0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010],
        'X' => [0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001],
        'Y' => [0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100, 0b00100],
        'Z' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111],
        '0' => [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
        '1' => [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        '2' => [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
        '3' => [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110],
        '4' => [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
        '5' => [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
        '6' => [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
        '7' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
        '8' => [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
        '9' => [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
        _ => return None,
    };
    Some(rows)
}

/// True when `c` has an entry in the glyph table.
pub fn is_supported(c: char) -> bool {
    glyph_rows(c).is_some()
}

/// Lays `text` out left to right, one glyph per `cell` (width, height).
///
/// `\n` or `|` starts a new row of cells. Each glyph is drawn at the largest
/// integer dot scale that fits the cell, centered in it. The mask is
/// `max_line_len * cell.0` wide and `lines * cell.1` tall (0 wide for "").
pub fn render_glyph_mask(text: &str, cell: (usize, usize)) -> Result<Mask, PhantomError> {
    if cell.0 < GLYPH_W || cell.1 < GLYPH_H {
        return Err(PhantomError::CellTooSmall(cell));
    }
    let lines: Vec<Vec<[u8; GLYPH_H]>> = text
        .split(['\n', '|'])
        .map(|line| {
            line.chars()
                .map(|c| glyph_rows(c).ok_or(PhantomError::UnsupportedChar(c)))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let max_len = lines.iter().map(Vec::len).max().unwrap_or(0);
    let (cw, ch) = cell;
    let dot = (cw / GLYPH_W).min(ch / GLYPH_H);
    let off_x = (cw - GLYPH_W * dot) / 2;
    let off_y = (ch - GLYPH_H * dot) / 2;
    let mut mask = Mask::filled(max_len * cw, lines.len() * ch, false);
    for (li, line) in lines.iter().enumerate() {
        for (gi, rows) in line.iter().enumerate() {
            for (ry, bits) in rows.iter().enumerate() {
                for rx in 0..GLYPH_W {
                    if bits & (1 << (GLYPH_W - 1 - rx)) == 0 {
                        continue;
                    }
                    for dy in 0..dot {
                        for dx in 0..dot {
                            let x = gi * cw + off_x + rx * dot + dx;
                            let y = li * ch + off_y + ry * dot + dy;
                            mask.set(x, y, true);
                        }
                    }
                }
            }
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_zero_width() {
        let m = render_glyph_mask("", (5, 7)).unwrap();
        assert_eq!(m.width(), 0);
        assert_eq!(m.count(), 0);
    }

    #[test]
    fn letter_i_is_the_center_column() {
        let m = render_glyph_mask("I", (5, 7)).unwrap();
        assert_eq!(m.dims(), (5, 7));
        assert_eq!(m.count(), 7);
        for y in 0..7 {
            for x in 0..5 {
                assert_eq!(*m.get(x, y), x == 2, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn scaled_cells_and_layout() {
        let m = render_glyph_mask("II|I", (12, 16)).unwrap();
        // dot = min(12/5, 16/7) = 2; glyph 10x14 centered with offset (1, 1)
        assert_eq!(m.dims(), (24, 32));
        assert_eq!(m.count(), 3 * 7 * 4);
        assert!(*m.get(1 + 4, 1));
        assert!(*m.get(12 + 1 + 5, 14));
        assert!(!m.get(12 + 5, 16 + 1));
    }

    #[test]
    fn deterministic_and_rejects_unknown() {
        let a = render_glyph_mask("PAPYRUS 79", (6, 8)).unwrap();
        let b = render_glyph_mask("PAPYRUS 79", (6, 8)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            render_glyph_mask("abc", (6, 8)),
            Err(PhantomError::UnsupportedChar('a'))
        ));
        assert!(matches!(
            render_glyph_mask("A", (4, 8)),
            Err(PhantomError::CellTooSmall(_))
        ));
    }

    #[test]
    fn table_covers_capitals_digits_space() {
        for c in ('A'..='Z').chain('0'..='9').chain([' ']) {
            assert!(is_supported(c), "{c}");
        }
    }
}
