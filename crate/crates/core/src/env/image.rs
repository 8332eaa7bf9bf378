use std::fmt::Write as _;

/// Binary observation matrix, stored as row-major bitsets of
/// `words_per_row` little-endian `u64` words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateImage {
    pub height: usize,
    pub width: usize,
    words: Vec<u64>,
}

impl StateImage {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, words: vec![0; height * width.div_ceil(64)] }
    }

    #[inline]
    pub fn words_per_row(&self) -> usize {
        self.width.div_ceil(64)
    }

    /// Packed bits of `row`; bit `c % 64` of word `c / 64` is column `c`.
    #[inline]
    pub fn row_words(&self, row: usize) -> &[u64] {
        let w = self.words_per_row();
        &self.words[row * w..(row + 1) * w]
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        assert!(col < self.width, "column {col} outside width {}", self.width);
        ((self.row_words(row)[col / 64] >> (col % 64)) & 1) as u8
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize) {
        assert!(row < self.height && col < self.width, "({row}, {col}) outside image");
        let w = self.words_per_row();
        self.words[row * w + col / 64] |= 1 << (col % 64);
    }

    /// Sets columns `[col, col + len)` of `row`.
    pub fn set_run(&mut self, row: usize, col: usize, len: usize) {
        assert!(row < self.height && col + len <= self.width, "run outside image");
        let w = self.words_per_row();
        let (mut c, end) = (col, col + len);
        while c < end {
            let (i, o) = (c / 64, c % 64);
            let take = (64 - o).min(end - c);
            let mask = if take == 64 { u64::MAX } else { ((1u64 << take) - 1) << o };
            self.words[row * w + i] |= mask;
            c += take;
        }
    }

    /// Sum of the column slice `[col, col + width)` in `row`.
    pub fn row_count(&self, row: usize, col: usize, width: usize) -> usize {
        (col..col + width).map(|c| self.get(row, c) as usize).sum()
    }

    pub fn ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Row-major `0`/`1` text, one line per row.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.height * (self.width + 1));
        for r in 0..self.height {
            for c in 0..self.width {
                s.push(if self.get(r, c) == 0 { '0' } else { '1' });
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Option<Self> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
        let width = rows.first()?.len();
        let mut img = Self::zeros(rows.len(), width);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != width {
                return None;
            }
            for (c, ch) in row.chars().enumerate() {
                match ch {
                    '0' => {}
                    '1' => img.set(r, c),
                    _ => return None,
                }
            }
        }
        Some(img)
    }
}

impl std::fmt::Display for StateImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut s = String::new();
        for r in 0..self.height {
            for c in 0..self.width {
                let _ = s.write_char(if self.get(r, c) == 0 { '.' } else { '#' });
            }
            s.push('\n');
        }
        f.write_str(&s)
    }
}
