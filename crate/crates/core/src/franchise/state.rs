use serde::{Deserialize, Serialize};

use crate::distributions::CountMatrix;
use crate::error::{HcrmError, Result};

/// Seat of a customer that is currently being resampled.
pub const UNSEATED: usize = usize::MAX;
/// Dish of a table that is currently being resampled.
pub const UNSERVED: usize = usize::MAX;

/// A dish removed by swap-removal: `removed` now holds the former last dish.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DishRemoval {
    pub removed: usize,
}

/// Seating arrangement of the franchise.
///
/// Customer `l` of restaurant `i` carries an observation `items[i][l]` (a
/// word id; zero under the unit likelihood), sits at `seat[i][l]`, and table
/// `j` of restaurant `i` serves `table_dish[i][j]`. Tables and dishes are
/// kept compact by swap-removal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FranchiseState {
    items: Vec<Vec<u32>>,
    seat: Vec<Vec<usize>>,
    table_size: Vec<Vec<u32>>,
    table_dish: Vec<Vec<usize>>,
    restaurant_dish: Vec<Vec<u32>>,
    dish_tables: Vec<u32>,
}

impl FranchiseState {
    /// All customers unseated.
    pub fn new(items: Vec<Vec<u32>>) -> Self {
        let n = items.len();
        FranchiseState {
            seat: items.iter().map(|d| vec![UNSEATED; d.len()]).collect(),
            items,
            table_size: vec![Vec::new(); n],
            table_dish: vec![Vec::new(); n],
            restaurant_dish: vec![Vec::new(); n],
            dish_tables: Vec::new(),
        }
    }

    /// Unit-likelihood restaurants with the given numbers of customers.
    pub fn with_sizes(sizes: &[usize]) -> Self {
        Self::new(sizes.iter().map(|&s| vec![0; s]).collect())
    }

    /// Builds a fully seated state from explicit assignments.
    pub fn from_assignments(
        items: Vec<Vec<u32>>,
        seat: Vec<Vec<usize>>,
        table_dish: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if seat.len() != items.len() || table_dish.len() != items.len() {
            return Err(HcrmError::Dimension("per-restaurant vectors differ in length".into()));
        }
        let n = items.len();
        let p = table_dish.iter().flatten().map(|&k| k + 1).max().unwrap_or(0);
        let mut s = FranchiseState {
            items,
            seat,
            table_size: table_dish.iter().map(|t| vec![0; t.len()]).collect(),
            table_dish,
            restaurant_dish: vec![vec![0; p]; n],
            dish_tables: vec![0; p],
        };
        for i in 0..n {
            if s.seat[i].len() != s.items[i].len() {
                return Err(HcrmError::Dimension(format!("restaurant {i}: seats vs items")));
            }
            for l in 0..s.seat[i].len() {
                let j = s.seat[i][l];
                if j >= s.table_size[i].len() {
                    return Err(HcrmError::StateCorruption(format!(
                        "customer ({i},{l}) at missing table {j}"
                    )));
                }
                s.table_size[i][j] += 1;
            }
            for &k in &s.table_dish[i] {
                s.restaurant_dish[i][k] += 1;
                s.dish_tables[k] += 1;
            }
        }
        s.check_invariants()?;
        Ok(s)
    }

    pub fn num_restaurants(&self) -> usize {
        self.items.len()
    }

    pub fn num_customers(&self, i: usize) -> usize {
        self.items[i].len()
    }

    pub fn total_customers(&self) -> usize {
        self.items.iter().map(Vec::len).sum()
    }

    pub fn max_customers(&self) -> usize {
        self.items.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn items(&self, i: usize) -> &[u32] {
        &self.items[i]
    }

    pub fn item(&self, i: usize, l: usize) -> u32 {
        self.items[i][l]
    }

    pub fn seat(&self, i: usize, l: usize) -> usize {
        self.seat[i][l]
    }

    pub fn seats(&self, i: usize) -> &[usize] {
        &self.seat[i]
    }

    pub fn num_tables(&self, i: usize) -> usize {
        self.table_size[i].len()
    }

    pub fn total_tables(&self) -> usize {
        self.dish_tables.iter().map(|&r| r as usize).sum()
    }

    pub fn table_sizes(&self, i: usize) -> &[u32] {
        &self.table_size[i]
    }

    pub fn table_dishes(&self, i: usize) -> &[usize] {
        &self.table_dish[i]
    }

    pub fn num_dishes(&self) -> usize {
        self.dish_tables.len()
    }

    /// r_·k for every dish.
    pub fn dish_table_counts(&self) -> &[u32] {
        &self.dish_tables
    }

    /// r_ik for restaurant i.
    pub fn restaurant_dish_counts(&self, i: usize) -> &[u32] {
        &self.restaurant_dish[i]
    }

    /// Dish serving customer (i, l).
    pub fn dish_of(&self, i: usize, l: usize) -> usize {
        self.table_dish[i][self.seat[i][l]]
    }

    /// The n×p matrix r_ik (errors when there are no tables at all).
    pub fn table_count_matrix(&self) -> Result<CountMatrix> {
        let p = self.num_dishes();
        let data = self.restaurant_dish.iter().flatten().copied().collect();
        CountMatrix::from_parts(self.num_restaurants(), p, data)
    }

    /// Customer counts per dish across all restaurants, sorted descending.
    pub fn sorted_dish_customer_totals(&self) -> Vec<u32> {
        let mut totals = vec![0u32; self.num_dishes()];
        for i in 0..self.num_restaurants() {
            for (j, &m) in self.table_size[i].iter().enumerate() {
                totals[self.table_dish[i][j]] += m;
            }
        }
        totals.sort_unstable_by(|a, b| b.cmp(a));
        totals
    }

    /// Customer indices grouped by table for restaurant i.
    pub fn table_members(&self, i: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_tables(i)];
        for (l, &j) in self.seat[i].iter().enumerate() {
            if j != UNSEATED {
                out[j].push(l);
            }
        }
        out
    }

    /// Removes customer (i, l) from its table. Returns the customer's dish,
    /// and the dish removal if the customer was the dish's last one.
    pub fn unseat(&mut self, i: usize, l: usize) -> (usize, Option<DishRemoval>) {
        let j = self.seat[i][l];
        debug_assert_ne!(j, UNSEATED);
        self.seat[i][l] = UNSEATED;
        let k = self.table_dish[i][j];
        self.table_size[i][j] -= 1;
        if self.table_size[i][j] > 0 {
            return (k, None);
        }
        self.remove_table(i, j);
        (k, self.release_dish_table(i, k))
    }

    fn remove_table(&mut self, i: usize, j: usize) {
        let last = self.table_size[i].len() - 1;
        if j != last {
            for s in self.seat[i].iter_mut() {
                if *s == last {
                    *s = j;
                }
            }
        }
        self.table_size[i].swap_remove(j);
        self.table_dish[i].swap_remove(j);
    }

    fn release_dish_table(&mut self, i: usize, k: usize) -> Option<DishRemoval> {
        self.restaurant_dish[i][k] -= 1;
        self.dish_tables[k] -= 1;
        if self.dish_tables[k] > 0 {
            return None;
        }
        let last = self.dish_tables.len() - 1;
        if k != last {
            for dishes in self.table_dish.iter_mut() {
                for d in dishes.iter_mut() {
                    if *d == last {
                        *d = k;
                    }
                }
            }
        }
        for row in self.restaurant_dish.iter_mut() {
            row.swap_remove(k);
        }
        self.dish_tables.swap_remove(k);
        Some(DishRemoval { removed: k })
    }

    /// Seats an unseated customer at an existing table.
    pub fn seat_at(&mut self, i: usize, l: usize, j: usize) {
        debug_assert_eq!(self.seat[i][l], UNSEATED);
        self.seat[i][l] = j;
        self.table_size[i][j] += 1;
    }

    /// Opens a new table for an unseated customer and serves it `dish`
    /// (`None` creates a new dish). Returns the dish index.
    pub fn seat_new_table(&mut self, i: usize, l: usize, dish: Option<usize>) -> usize {
        let j = self.table_size[i].len();
        self.table_size[i].push(1);
        self.table_dish[i].push(UNSERVED);
        self.seat[i][l] = j;
        self.serve(i, j, dish)
    }

    /// Detaches table (i, j) from its dish ahead of resampling it.
    pub fn unserve(&mut self, i: usize, j: usize) -> (usize, Option<DishRemoval>) {
        let k = self.table_dish[i][j];
        debug_assert_ne!(k, UNSERVED);
        self.table_dish[i][j] = UNSERVED;
        (k, self.release_dish_table(i, k))
    }

    /// Serves table (i, j) an existing dish or a new one. Returns the dish.
    pub fn serve(&mut self, i: usize, j: usize, dish: Option<usize>) -> usize {
        let k = match dish {
            Some(k) => k,
            None => {
                for row in self.restaurant_dish.iter_mut() {
                    row.push(0);
                }
                self.dish_tables.push(0);
                self.dish_tables.len() - 1
            }
        };
        self.table_dish[i][j] = k;
        self.restaurant_dish[i][k] += 1;
        self.dish_tables[k] += 1;
        k
    }

    /// Recounts everything from the seat and dish maps.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.num_restaurants();
        let p = self.num_dishes();
        let mut r = vec![vec![0u32; p]; n];
        let mut r_dot = vec![0u32; p];
        for i in 0..n {
            let t = self.table_size[i].len();
            if self.table_dish[i].len() != t {
                return Err(HcrmError::StateCorruption(format!(
                    "restaurant {i}: {t} tables but {} dish entries",
                    self.table_dish[i].len()
                )));
            }
            let mut m = vec![0u32; t];
            for (l, &j) in self.seat[i].iter().enumerate() {
                if j == UNSEATED || j >= t {
                    return Err(HcrmError::StateCorruption(format!(
                        "customer ({i},{l}) has seat {j}"
                    )));
                }
                m[j] += 1;
            }
            if m != self.table_size[i] {
                return Err(HcrmError::StateCorruption(format!(
                    "restaurant {i}: table sizes out of sync"
                )));
            }
            if m.contains(&0) {
                return Err(HcrmError::StateCorruption(format!("restaurant {i}: empty table")));
            }
            if self.restaurant_dish[i].len() != p {
                return Err(HcrmError::StateCorruption(format!(
                    "restaurant {i}: r row has wrong width"
                )));
            }
            for &k in &self.table_dish[i] {
                if k >= p {
                    return Err(HcrmError::UnknownDish(k));
                }
                r[i][k] += 1;
                r_dot[k] += 1;
            }
            if r[i] != self.restaurant_dish[i] {
                return Err(HcrmError::StateCorruption(format!(
                    "restaurant {i}: r_ik out of sync"
                )));
            }
        }
        if r_dot != self.dish_tables {
            return Err(HcrmError::StateCorruption("r_.k out of sync".into()));
        }
        if r_dot.contains(&0) {
            return Err(HcrmError::StateCorruption("dish with no tables".into()));
        }
        Ok(())
    }
}
