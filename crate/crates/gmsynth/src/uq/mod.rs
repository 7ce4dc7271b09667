//! Record-to-record variability: marginals and copulas.




