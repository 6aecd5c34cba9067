//! Point shading: Lambertian SH irradiance plus the split specular term.

use std::f64::consts::PI;

use crate::geometry::SdfField;
use crate::material::{specular_radiance, IntegratedBasis, MaterialField};
use crate::math::{reflect, Direction, Vec3};
use crate::sh::{diffuse_irradiance, prefiltered_specular_light, Rgb, SHLight, VmfLobe};
use crate::{Error, Result};

/// Everything a shading query reads.
#[derive(Clone, Copy)]
pub struct ShadeContext<'a> {
    pub params: &'a [f64],
    pub field: &'a SdfField,
    pub material: &'a MaterialField,
    pub basis: &'a IntegratedBasis,
    pub light: &'a SHLight,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadeTerms {
    pub diffuse: Rgb,
    pub specular: Rgb,
}

impl ShadeTerms {
    pub fn total(&self) -> Rgb {
        [0, 1, 2].map(|c| self.diffuse[c] + self.specular[c])
    }
}

impl ShadeContext<'_> {
    /// Shading with an explicit normal. Back-facing queries get no specular.
    pub fn shade_with_normal(&self, x: &Vec3, n: &Direction, omega_o: &Direction) -> Result<ShadeTerms> {
        let m = self.material.eval(self.params, &self.field.bounds, x)?;
        let irr = diffuse_irradiance(self.light, n);
        let diffuse = [0, 1, 2].map(|c| m.albedo[c] / PI * irr[c]);
        let specular = match self.basis.eval(self.params, omega_o, n) {
            Ok(b) => {
                let lobe = VmfLobe::new(reflect(omega_o, n), m.kappa)?;
                specular_radiance(&m, &b, prefiltered_specular_light(self.light, &lobe))?
            }
            Err(Error::BackFacing(_)) => [0.0; 3],
            Err(e) => return Err(e),
        };
        Ok(ShadeTerms { diffuse, specular })
    }

    /// Both terms with the normal taken from the SDF gradient.
    pub fn shade_terms(&self, x: &Vec3, omega_o: &Direction) -> Result<ShadeTerms> {
        let n = self.field.normal(self.params, x)?;
        self.shade_with_normal(x, &n, omega_o)
    }

    /// Outgoing radiance at `x` toward `omega_o` (surface to camera).
    pub fn shade(&self, x: &Vec3, omega_o: &Direction) -> Result<Rgb> {
        Ok(self.shade_terms(x, omega_o)?.total())
    }
}
