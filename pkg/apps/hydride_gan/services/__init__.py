"""Services for the hydride GAN pipeline."""
