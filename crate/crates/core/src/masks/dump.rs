//! Sparse text dumps and terminal grids for masks.
//!
//! Dump line: `sentence_id<TAB>role<TAB>n<TAB>i,j i,j ...` listing the open
//! entries as 1-based `(query, key)` pairs in row-major order.

use std::fmt::Write as _;

use super::{MaskRole, RoleMask};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpRecord {
    pub sentence_id: String,
    pub role: MaskRole,
    pub n: usize,
    /// 1-based open coordinates, sorted.
    pub open: Vec<(usize, usize)>,
}

pub fn write_dump_line(sentence_id: &str, mask: &RoleMask) -> String {
    let coords: Vec<String> = mask
        .open_entries()
        .into_iter()
        .map(|(i, j)| format!("{},{}", i + 1, j + 1))
        .collect();
    format!(
        "{}\t{}\t{}\t{}",
        sentence_id,
        mask.role(),
        mask.n(),
        coords.join(" ")
    )
}

pub fn parse_dump_line(line: &str) -> Option<DumpRecord> {
    let mut fields = line.splitn(4, '\t');
    let sentence_id = fields.next()?.to_string();
    let role = fields.next()?.parse().ok()?;
    let n = fields.next()?.parse().ok()?;
    let open = fields
        .next()?
        .split_whitespace()
        .map(|pair| {
            let (i, j) = pair.split_once(',')?;
            Some((i.parse().ok()?, j.parse().ok()?))
        })
        .collect::<Option<Vec<_>>>()?;
    Some(DumpRecord {
        sentence_id,
        role,
        n,
        open,
    })
}

/// `.` marks an open entry, `#` a masked one. Rows are queries, columns
/// keys; both are labelled by 1-based position and the rows by token form.
pub fn render_grid<'a>(mask: &RoleMask, forms: impl IntoIterator<Item = &'a str>) -> String {
    let forms: Vec<&str> = forms.into_iter().collect();
    let n = mask.n();
    let width = forms.iter().map(|f| f.chars().count()).max().unwrap_or(0);
    let idx_width = n.to_string().len();
    let mut out = String::new();
    let _ = writeln!(out, "role: {}  n: {}", mask.role(), n);
    let _ = write!(out, "{:idx_width$} {:width$} ", "", "");
    for j in 0..n {
        let _ = write!(out, " {:>idx_width$}", j + 1);
    }
    out.push('\n');
    for i in 0..n {
        let form = forms.get(i).copied().unwrap_or("");
        let _ = write!(out, "{:>idx_width$} {:width$} ", i + 1, form);
        for j in 0..n {
            let c = if mask.is_open(i, j) { '.' } else { '#' };
            let _ = write!(out, " {c:>idx_width$}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::relative_position_mask;

    #[test]
    fn dump_line_format() {
        let line = write_dump_line("s1", &relative_position_mask(2));
        assert_eq!(line, "s1\trelpos\t2\t1,1 1,2 2,1 2,2");
        let rec = parse_dump_line(&line).unwrap();
        assert_eq!(rec.open, vec![(1, 1), (1, 2), (2, 1), (2, 2)]);
        assert_eq!(rec.role, MaskRole::RelativePosition);
    }

    #[test]
    fn grid_for_relpos() {
        let g = render_grid(&relative_position_mask(3), ["a", "b", "c"]);
        let rows: Vec<&str> = g.lines().skip(2).collect();
        assert_eq!(rows, vec!["1 a  . . #", "2 b  . . .", "3 c  # . ."]);
    }
}
