//! Subnet-level access control.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::error::PolicyError;
use crate::net::types::IpMatch;

/// Allow/deny grid over ordered source and destination subnets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccessMatrix {
    pub src_subnets: Vec<IpMatch>,
    pub dst_subnets: Vec<IpMatch>,
    /// `allow[i][j]` is true when `src_subnets[i]` may reach `dst_subnets[j]`.
    pub allow: Vec<Vec<bool>>,
}

impl AccessMatrix {
    /// Square matrix over one subnet list.
    pub fn square(subnets: Vec<IpMatch>, allow: Vec<Vec<bool>>) -> Self {
        AccessMatrix {
            src_subnets: subnets.clone(),
            dst_subnets: subnets,
            allow,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.allow.len() != self.src_subnets.len() {
            return Err(format!(
                "access matrix has {} rows for {} source subnets",
                self.allow.len(),
                self.src_subnets.len()
            ));
        }
        for (i, row) in self.allow.iter().enumerate() {
            if row.len() != self.dst_subnets.len() {
                return Err(format!(
                    "access matrix row {} has {} cells for {} destination subnets",
                    i,
                    row.len(),
                    self.dst_subnets.len()
                ));
            }
        }
        Ok(())
    }

    fn src_index(&self, ip: Ipv4Addr) -> Result<usize, PolicyError> {
        self.src_subnets
            .iter()
            .position(|s| s.matches(ip))
            .ok_or(PolicyError::UnknownSubnet(ip))
    }

    fn dst_index(&self, ip: Ipv4Addr) -> Result<usize, PolicyError> {
        self.dst_subnets
            .iter()
            .position(|s| s.matches(ip))
            .ok_or(PolicyError::UnknownSubnet(ip))
    }

    /// True when traffic from `src` to `dst` is authorized.
    pub fn allows(&self, src: Ipv4Addr, dst: Ipv4Addr) -> Result<bool, PolicyError> {
        let i = self.src_index(src)?;
        let j = self.dst_index(dst)?;
        Ok(self.allow[i][j])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The 7-subnet grid used by the access-control scenarios.
    pub fn seven_subnet_matrix() -> AccessMatrix {
        let subnets: Vec<IpMatch> = [0u8, 1, 2, 3, 5, 8, 10]
            .iter()
            .map(|&third| IpMatch::subnet(Ipv4Addr::new(10, 0, third, 0), 24))
            .collect();
        let t = true;
        let f = false;
        let allow = vec![
            vec![t, t, f, f, f, f, f],
            vec![t, t, f, f, f, f, f],
            vec![f, f, t, t, f, f, f],
            vec![f, f, t, t, f, f, t],
            vec![f, f, f, f, t, t, f],
            vec![f, f, f, f, t, t, f],
            vec![f, f, f, t, f, f, t],
        ];
        AccessMatrix::square(subnets, allow)
    }

    #[test]
    fn allowed_pair() {
        let m = seven_subnet_matrix();
        assert!(m
            .allows([10, 0, 0, 7].into(), [10, 0, 1, 9].into())
            .unwrap());
    }

    #[test]
    fn restricted_pair() {
        let m = seven_subnet_matrix();
        assert!(!m
            .allows([10, 0, 0, 7].into(), [10, 0, 5, 9].into())
            .unwrap());
    }

    #[test]
    fn diagonal_is_allowed() {
        let m = seven_subnet_matrix();
        assert!(m
            .allows([10, 0, 3, 2].into(), [10, 0, 3, 200].into())
            .unwrap());
    }

    #[test]
    fn unknown_subnet_is_an_error() {
        let m = seven_subnet_matrix();
        assert!(matches!(
            m.allows([192, 168, 0, 1].into(), [10, 0, 1, 9].into()),
            Err(PolicyError::UnknownSubnet(_))
        ));
    }

    #[test]
    fn dimension_mismatch_fails_validation() {
        let mut m = seven_subnet_matrix();
        m.allow.pop();
        assert!(m.validate().is_err());
    }
}
