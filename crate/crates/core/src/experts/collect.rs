//! Blind terminal labeling: items are shown one at a time and no feedback is
//! given until the sheet is written.

use std::io::{BufRead, Read, Write};

use super::{ExpertError, Label, PresentedItem, SheetRow};
use crate::data::{format_real, Dataset, ObsId};

fn io_err(source: std::io::Error) -> ExpertError {
    ExpertError::Io {
        path: "<terminal>".into(),
        source,
    }
}

/// Prompts until `parse` accepts a line. End of input is an error.
fn ask<R: BufRead, W: Write, T>(
    input: &mut R,
    output: &mut W,
    prompt: &str,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<T, ExpertError> {
    loop {
        write!(output, "{prompt}").map_err(io_err)?;
        output.flush().map_err(io_err)?;
        let mut line = String::new();
        if input.read_line(&mut line).map_err(io_err)? == 0 {
            return Err(ExpertError::InputEnded);
        }
        match parse(line.trim()) {
            Ok(v) => return Ok(v),
            Err(msg) => writeln!(output, "  {msg}").map_err(io_err)?,
        }
    }
}

fn parse_label(s: &str) -> Result<Label, String> {
    s.parse::<u8>()
        .map_err(|_| "enter 0, 1 or 2".to_owned())
        .and_then(Label::try_from)
}

fn parse_score(s: &str) -> Result<u8, String> {
    match s.parse::<u8>() {
        Ok(v) if (1..=10).contains(&v) => Ok(v),
        _ => Err("enter an integer from 1 to 10".into()),
    }
}

/// Runs one expert through `items` and returns their sheet rows in
/// presentation order. `data` supplies the values shown for each item.
pub fn collect_labels<R: BufRead, W: Write>(
    expert_id: &str,
    items: &[PresentedItem],
    data: &Dataset,
    mut input: R,
    mut output: W,
) -> Result<Vec<SheetRow>, ExpertError> {
    let rows_of: Vec<usize> = items
        .iter()
        .map(|it| {
            data.row_index(&it.observation_id)
                .ok_or_else(|| ExpertError::UnknownObservation(it.observation_id.clone()))
        })
        .collect::<Result<_, _>>()?;
    let columns = data.columns();
    let parse_dims = |s: &str| -> Result<Vec<String>, String> {
        let dims: Vec<String> = s
            .split(';')
            .map(str::trim)
            .filter(|d| !d.is_empty())
            .map(str::to_owned)
            .collect();
        match dims.iter().find(|d| !columns.contains(d)) {
            Some(bad) => Err(format!("unknown dimension {bad:?}; choose from {}", columns.join(", "))),
            None => Ok(dims),
        }
    };

    writeln!(
        output,
        "{} items. Label each as 0 (normal), 1 (outlier) or 2 (undecided).",
        items.len()
    )
    .map_err(io_err)?;
    let mut judged = Vec::with_capacity(items.len());
    for (pos, (item, &row)) in items.iter().zip(&rows_of).enumerate() {
        writeln!(output, "\nItem {} of {}", pos + 1, items.len()).map_err(io_err)?;
        for (name, value) in columns.iter().zip(data.row(row)) {
            writeln!(output, "  {name:>12} = {}", format_real(*value)).map_err(io_err)?;
        }
        let label = ask(&mut input, &mut output, "label [0/1/2]: ", parse_label)?;
        let dims = ask(
            &mut input,
            &mut output,
            "dimensions used (';'-separated, blank for none): ",
            parse_dims,
        )?;
        judged.push((item, label, dims));
    }
    writeln!(output).map_err(io_err)?;
    let relevance = ask(
        &mut input,
        &mut output,
        "relevance of this task to your job [1-10]: ",
        parse_score,
    )?;
    let difficulty = ask(&mut input, &mut output, "difficulty of this task [1-10]: ", parse_score)?;

    Ok(judged
        .into_iter()
        .map(|(item, label, dims_used)| SheetRow {
            expert_id: expert_id.to_owned(),
            item_id: item.item_id.clone(),
            observation_id: item.observation_id.clone(),
            dup_group: item.dup_group.clone(),
            label,
            dims_used,
            relevance,
            difficulty,
        })
        .collect())
}

#[derive(serde::Serialize, serde::Deserialize)]
struct RawItem {
    item_id: String,
    observation_id: String,
    dup_group: String,
}

/// Reads `item_id,observation_id,dup_group` rows.
pub fn read_presented_items<R: Read>(reader: R) -> Result<Vec<PresentedItem>, ExpertError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize::<RawItem>()
        .map(|r| {
            let r = r?;
            Ok(PresentedItem {
                item_id: r.item_id,
                observation_id: ObsId(r.observation_id),
                dup_group: Some(r.dup_group).filter(|g| !g.is_empty()),
            })
        })
        .collect()
}

pub fn write_presented_items<W: Write>(items: &[PresentedItem], writer: W) -> Result<(), ExpertError> {
    let mut w = csv::Writer::from_writer(writer);
    for it in items {
        w.serialize(RawItem {
            item_id: it.item_id.clone(),
            observation_id: it.observation_id.0.clone(),
            dup_group: it.dup_group.clone().unwrap_or_default(),
        })?;
    }
    w.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experts::{inject_duplicates, ExpertLabelSheet};

    fn data() -> Dataset {
        Dataset::from_rows(vec![vec![0.5, 1.0], vec![-2.0, 3.0], vec![4.0, 0.0]]).unwrap()
    }

    #[test]
    fn collects_a_blind_session() {
        let items = inject_duplicates(data().ids(), 1, 3).unwrap();
        assert_eq!(items.len(), 4);
        let answers = "1\nx1\n7\n0\nx1; x2\nbogus\n2\nx9\nx2\n0\n\n8\n3\n";
        let mut shown = Vec::new();
        let rows = collect_labels("e1", &items, &data(), answers.as_bytes(), &mut shown).unwrap();
        let labels: Vec<Label> = rows.iter().map(|r| r.label).collect();
        assert_eq!(labels, [Label::Outlier, Label::Normal, Label::Undecided, Label::Normal]);
        assert_eq!(rows[1].dims_used, ["x1", "x2"]);
        assert_eq!(rows[2].dims_used, ["x2"]);
        assert!(rows.iter().all(|r| r.relevance == 8 && r.difficulty == 3));
        let shown = String::from_utf8(shown).unwrap();
        assert!(shown.contains("Item 4 of 4"));
        assert!(shown.contains("unknown dimension \"x9\""));
        // The collected rows form a valid sheet.
        ExpertLabelSheet::new(rows).unwrap();
    }

    #[test]
    fn truncated_input_is_an_error() {
        let items = inject_duplicates(data().ids(), 0, 0).unwrap();
        let r = collect_labels("e1", &items, &data(), "1\n\n".as_bytes(), Vec::new());
        assert!(matches!(r, Err(ExpertError::InputEnded)));
    }

    #[test]
    fn presented_items_round_trip() {
        let items = inject_duplicates(data().ids(), 2, 5).unwrap();
        let mut buf = Vec::new();
        write_presented_items(&items, &mut buf).unwrap();
        assert_eq!(read_presented_items(buf.as_slice()).unwrap(), items);
    }
}
