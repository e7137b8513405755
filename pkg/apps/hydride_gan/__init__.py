"""Hydride GAN pipeline package."""
