"""Forward models: ultradian glucose-insulin dynamics and 1-D shear-wave propagation."""
