use super::manifest::{Manifest, Split};
use crate::error::{config_err, Result};
use crate::rng::Rng;

const SPLIT_STREAM: u64 = 0x5b1_17;

/// Minimum per-artist count for a stratified split.
pub const STRATIFY_MIN: usize = 5;

/// Largest-remainder apportionment of `n` items into shares proportional to
/// `ratios`.
///
/// Each share gets `floor(n·r_i / R)`; the leftover items go one each to the shares
/// with the largest fractional parts. Ties go to the share with the smaller ratio, then
/// to the lower index. Integer arithmetic throughout.
pub fn largest_remainder(n: usize, ratios: &[usize]) -> Vec<usize> {
    let total: usize = ratios.iter().sum();
    assert!(total > 0, "ratios must not all be zero");
    let mut sizes: Vec<usize> = ratios.iter().map(|&r| n * r / total).collect();
    let rem: Vec<usize> = ratios.iter().map(|&r| n * r % total).collect();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| rem[b].cmp(&rem[a]).then(ratios[a].cmp(&ratios[b])).then(a.cmp(&b)));
    let left = n - sizes.iter().sum::<usize>();
    for &i in order.iter().take(left) {
        sizes[i] += 1;
    }
    sizes
}

/// Per-artist split sizes whose row sums are the artist counts and whose column
/// sums are the global largest-remainder sizes.
fn stratified_sizes(counts: &[usize], ratios: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = ratios.iter().sum();
    let n: usize = counts.iter().sum();
    let global = largest_remainder(n, ratios);
    let mut table: Vec<Vec<usize>> = counts.iter().map(|&c| ratios.iter().map(|&r| c * r / total).collect()).collect();
    let mut row_left: Vec<usize> = counts.iter().zip(&table).map(|(&c, row)| c - row.iter().sum::<usize>()).collect();
    let mut col_left: Vec<usize> =
        (0..ratios.len()).map(|j| global[j] - table.iter().map(|row| row[j]).sum::<usize>()).collect();

    // Greedy by fractional part, same tie rules as the global apportionment.
    let mut cells: Vec<(usize, usize)> = (0..counts.len()).flat_map(|a| (0..ratios.len()).map(move |j| (a, j))).collect();
    let rem = |&(a, j): &(usize, usize)| counts[a] * ratios[j] % total;
    cells.sort_by(|x, y| rem(y).cmp(&rem(x)).then(ratios[x.1].cmp(&ratios[y.1])).then(x.cmp(y)));
    for (a, j) in cells {
        if row_left[a] > 0 && col_left[j] > 0 {
            table[a][j] += 1;
            row_left[a] -= 1;
            col_left[j] -= 1;
        }
    }
    // Whatever is left is placed northwest-corner style; totals agree so this terminates.
    let (mut a, mut j) = (0, 0);
    while a < counts.len() && j < ratios.len() {
        let k = row_left[a].min(col_left[j]);
        table[a][j] += k;
        row_left[a] -= k;
        col_left[j] -= k;
        if row_left[a] == 0 {
            a += 1;
        } else {
            j += 1;
        }
    }
    table
}

/// Assigns train/val/test by `ratios` (train:val:test).
///
/// Records are shuffled with a substream of `seed` and assigned contiguously.
/// When every artist has at least [`STRATIFY_MIN`] samples the split is done per artist
/// (global sizes stay the exact largest-remainder sizes); otherwise a warning is logged
/// and the split ignores artists.
pub fn split_dataset(manifest: &Manifest, ratios: [usize; 3], seed: u64, overwrite: bool) -> Result<Manifest> {
    if ratios.iter().sum::<usize>() == 0 {
        return Err(config_err!("split ratios must not all be zero"));
    }
    if !overwrite && manifest.records.iter().any(|r| r.split.is_some()) {
        return Err(config_err!("manifest already has split assignments; pass the overwrite flag to replace them"));
    }
    let mut rng = Rng::new(seed).split(SPLIT_STREAM);
    let mut out = manifest.clone();
    let k = manifest.num_classes();
    let mut by_artist: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, r) in manifest.records.iter().enumerate() {
        by_artist[manifest.artist_id(r)].push(i);
    }
    let counts: Vec<usize> = by_artist.iter().map(Vec::len).collect();
    let assign = |out: &mut Manifest, idx: &[usize], sizes: &[usize]| {
        let mut it = idx.iter();
        for (split, &size) in Split::ALL.iter().zip(sizes) {
            for &i in it.by_ref().take(size) {
                out.records[i].split = Some(*split);
            }
        }
    };
    if counts.iter().all(|&c| c >= STRATIFY_MIN) {
        let table = stratified_sizes(&counts, &ratios);
        for (idx, sizes) in by_artist.iter_mut().zip(&table) {
            rng.shuffle(idx);
            assign(&mut out, idx, sizes);
        }
    } else {
        log::warn!(
            "some artist has fewer than {STRATIFY_MIN} samples (counts {counts:?}); splitting without stratification"
        );
        let mut idx: Vec<usize> = (0..manifest.records.len()).collect();
        rng.shuffle(&mut idx);
        assign(&mut out, &idx, &largest_remainder(idx.len(), &ratios));
    }
    Ok(out)
}
