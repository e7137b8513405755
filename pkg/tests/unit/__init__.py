"""Unit tests package."""







