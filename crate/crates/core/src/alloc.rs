//! Integer "spread evenly with caps" allocation shared by mask initialization
//! and regrowth planning.

/// Spreads `amount` units as evenly as possible over bins with spare room
/// `rooms`, never exceeding a bin's room.
///
/// Every bin that does not fill up receives the same amount, give or take
/// one unit; the odd units go to bins earlier in `order`. Returns the
/// per-bin allocation and the units that did not fit anywhere.
pub(crate) fn spread_evenly(amount: usize, rooms: &[usize], order: &[usize]) -> (Vec<usize>, usize) {
    debug_assert_eq!(rooms.len(), order.len());
    let mut given = vec![0usize; rooms.len()];
    let mut left = amount;
    loop {
        let open: Vec<usize> = order.iter().copied().filter(|&i| given[i] < rooms[i]).collect();
        if left == 0 || open.is_empty() {
            break;
        }
        let share = left / open.len();
        if share == 0 {
            for &i in open.iter().take(left) {
                given[i] += 1;
            }
            left = 0;
            break;
        }
        for &i in &open {
            let take = share.min(rooms[i] - given[i]);
            given[i] += take;
            left -= take;
        }
    }
    (given, left)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_split_with_cap() {
        let (g, left) = spread_evenly(10, &[1, 100, 100], &[0, 1, 2]);
        assert_eq!(g, vec![1, 5, 4]);
        assert_eq!(left, 0);
    }

    #[test]
    fn order_decides_odd_units() {
        let (g, _) = spread_evenly(1, &[5, 5], &[1, 0]);
        assert_eq!(g, vec![0, 1]);
    }

    #[test]
    fn overflow_when_everything_fills() {
        let (g, left) = spread_evenly(20, &[3, 4], &[0, 1]);
        assert_eq!(g, vec![3, 4]);
        assert_eq!(left, 13);
    }

    #[test]
    fn nothing_to_give() {
        let (g, left) = spread_evenly(0, &[3, 4], &[0, 1]);
        assert_eq!(g, vec![0, 0]);
        assert_eq!(left, 0);
    }
}
