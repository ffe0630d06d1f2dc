use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Atom counts of each element in each species, with the masses needed to
/// turn species mass fractions into element mass fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementMatrix {
    pub elements: Vec<String>,
    /// g/mol per element.
    pub atomic_masses: Vec<f64>,
    pub species: Vec<String>,
    /// g/mol per species.
    pub molar_masses: Vec<f64>,
    /// `counts[i][k]`: atoms of element `i` in species `k`.
    pub counts: Vec<Vec<u32>>,
}

impl ElementMatrix {
    /// Checks that every species mass equals the sum of its atoms to 0.1%.
    pub fn new(
        elements: Vec<String>,
        atomic_masses: Vec<f64>,
        species: Vec<String>,
        molar_masses: Vec<f64>,
        counts: Vec<Vec<u32>>,
    ) -> Result<Self> {
        check_dim("atomic masses", elements.len(), atomic_masses.len())?;
        check_dim("molar masses", species.len(), molar_masses.len())?;
        check_dim("element rows", elements.len(), counts.len())?;
        for row in &counts {
            check_dim("species columns", species.len(), row.len())?;
        }
        for k in 0..species.len() {
            let from_atoms: f64 = (0..elements.len()).map(|i| counts[i][k] as f64 * atomic_masses[i]).sum();
            if ((from_atoms - molar_masses[k]) / molar_masses[k]).abs() > 1e-3 {
                return Err(Error::InvalidConfig(format!(
                    "species {} has molar mass {} but its atoms sum to {from_atoms}",
                    species[k], molar_masses[k]
                )));
            }
        }
        Ok(Self {
            elements,
            atomic_masses,
            species,
            molar_masses,
            counts,
        })
    }

    /// H/O/N table for the nine-species hydrogen-air set, ordered
    /// `H2, H, O, O2, OH, H2O, HO2, H2O2, N2`.
    pub fn hydrogen_air() -> Self {
        let names = ["H2", "H", "O", "O2", "OH", "H2O", "HO2", "H2O2", "N2"];
        Self::new(
            vec!["H".into(), "O".into(), "N".into()],
            vec![1.00794, 15.9994, 14.0067],
            names.iter().map(|s| s.to_string()).collect(),
            vec![2.01588, 1.00794, 15.9994, 31.9988, 17.00734, 18.01528, 33.00674, 34.01468, 28.0134],
            vec![
                vec![2, 1, 0, 0, 1, 2, 1, 2, 0],
                vec![0, 0, 1, 2, 1, 1, 2, 2, 0],
                vec![0, 0, 0, 0, 0, 0, 0, 0, 2],
            ],
        )
        .expect("hydrogen-air element table is consistent")
    }

    /// Table for the synthetic `F -> P` isomerization; both are C2H4O.
    pub fn toy_isomers() -> Self {
        let w = 2.0 * 12.011 + 4.0 * 1.008 + 15.999;
        Self::new(
            vec!["C".into(), "H".into(), "O".into()],
            vec![12.011, 1.008, 15.999],
            vec!["F".into(), "P".into()],
            vec![w, w],
            vec![vec![2, 2], vec![4, 4], vec![1, 1]],
        )
        .expect("toy element table is consistent")
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    /// Weight of species `k` in element `i`'s mass fraction:
    /// `N_i^k W_i / W_k`.
    pub fn weight(&self, i: usize, k: usize) -> f64 {
        self.counts[i][k] as f64 * self.atomic_masses[i] / self.molar_masses[k]
    }

    /// Element mass fractions of a species mass-fraction vector.
    pub fn element_mass_fractions(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim("species mass fractions", self.n_species(), y.len())?;
        Ok((0..self.n_elements())
            .map(|i| (0..self.n_species()).map(|k| self.weight(i, k) * y[k]).sum())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_tables_are_consistent() {
        let h2 = ElementMatrix::hydrogen_air();
        assert_eq!(h2.n_species(), 9);
        for k in 0..9 {
            let s: f64 = (0..3).map(|i| h2.counts[i][k] as f64 * h2.atomic_masses[i]).sum();
            assert!((s / h2.molar_masses[k] - 1.0).abs() < 1e-3);
        }
        ElementMatrix::toy_isomers();
    }

    #[test]
    fn inconsistent_table_rejected() {
        let bad = ElementMatrix::new(
            vec!["H".into()],
            vec![1.008],
            vec!["H2".into()],
            vec![3.0],
            vec![vec![2]],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn element_fractions_of_pure_species_sum_to_one() {
        let h2 = ElementMatrix::hydrogen_air();
        for k in 0..9 {
            let mut y = vec![0.0; 9];
            y[k] = 1.0;
            let z = h2.element_mass_fractions(&y).unwrap();
            assert!((z.iter().sum::<f64>() - 1.0).abs() < 1e-3, "{}", h2.species[k]);
        }
    }
}
